@problemName Bad
@dimensions 1
@seriesLength 3
@classLabel true a b
@data
1,2,inf:a
