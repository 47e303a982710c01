"""The hospital / statistics example federation as ready-to-load scripts."""

HOSPITAL_SCRIPT = """/* C1: Hospital DB */
create table D (ID int(11) NOT NULL, name varchar(45), rCode int, birthdate datetime, admission datetime, diagnosis varchar(45), treatment varchar(45), PRIMARY KEY (ID));
insert into D values
(1, 'Joe Soap', 2, date'2003-04-12', date'2014-09-20', 'Ebola', 'IV fluid, electrolytes'),
(2, 'Milly Soap', 2, date'2007-10-12', date'2014-10-06', 'Ebola', 'IV fluid, electrolytes'),
(3, 'Betty Boop', 1, date'1996-10-12', date'2014-10-06', 'bacterial infection', 'antibiotics'),
(4, 'John Bell', 3, date'2009-11-14', date'2014-09-10', 'Ebola', 'electrolytes'),
(5,'Benny Hall', 2, date'2007-10-10', date'2014-10-06', 'Ebola', 'IV fluid, electrolytes');
create view E as select rCode, extract(year from (admission-birthdate)) as age,
admission, diagnosis, treatment, count(*) as patients
from D group by rCode, age, admission, diagnosis, treatment;
"""

STATISTICS_SCRIPT = """/* C2: Statistics DB */
create table H (rCode int NOT NULL, location varchar(45), inhabitants int, under10 int, 10to20 int, 20to30 int,
  over30 int, lastUpdated datetime, PRIMARY KEY (rCode));
insert into H values
(1,'Central Freetown',300000, 80000, 75000, 65000, 80000, date'2014-10-20'),
(2,'East End Freetown',500000, 150000, 120000, 100000, 130000, date'2014-10-20'),
(3,'West End Freetown',200000, 50000, 40000, 40000, 120000, date'2014-10-20');
create view K as select rCode, location, inhabitants, under10, lastUpdated from H;
"""

REQUESTER_SCRIPT = """/* Requester Schema */
create view V1 of (rCode int, age int, admissionDate date, diagnosis char, treatment char, patients int) as get 'http://servD1:8180/Hospital/Hospital/E';
create view V2 of (rCode int, location char, inhabitants int, under10 int, lastUpdated date) as get 'http://servD2:8180/Statistics/Statistics/K';
create view V as select * from V1 natural join V2;
"""

PERCENTAGE_QUERY = "select location, diagnosis, (patients/under10)*100 as percentage from V where age < 10"
TOTALS_QUERY = "select location, diagnosis, sum(patients) as total from V group by location, diagnosis"
UPDATE_STATEMENT = "update V set inhabitants = 199000, under10 = 49000 where rCode = 3"
DELETE_STATEMENT = "delete from V2 where rCode = 5"

HOSPITAL_NETLOC = "servD1:8180"
STATISTICS_NETLOC = "servD2:8180"

SCRIPTS = {"Hospital": HOSPITAL_SCRIPT, "Statistics": STATISTICS_SCRIPT}
NETLOCS = {"Hospital": HOSPITAL_NETLOC, "Statistics": STATISTICS_NETLOC}
