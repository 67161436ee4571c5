@problemName Bad
@dimensions 1
@seriesLength 3
@classLabel true a b
1,2,3:a
