# handwritten fixture: two samples, two channels, three steps
@problemName TwoDim
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true a b
@data
1.0,2.0,3.0:4.0,5.0,6.0:a
-1.5,0.0,2.25:7,8,9:b
