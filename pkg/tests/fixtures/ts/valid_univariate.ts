@problemName Uni
@univariate true
@seriesLength 4
@classLabel true 1 2 3
@data
0.1,0.2,0.3,0.4:1
1e-3,2E2,-3.5,0:2
5,5,5,5:3
1,2,3,4:1
