"""Plot the experiment harness's CSV outputs.

This package never recomputes any quantity: the delimited files are the sole
contract with the producer.  Four figure kinds are supported: phase-diagram
contours, sweep curves with percentile bands, autocorrelation curves, and the
two-dimensional prior/boosted/posterior schematic.
"""

__version__ = "0.1.0"
