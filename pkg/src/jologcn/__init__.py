"""Joint-aligned optical flow patches and a two-stream graph-convolutional classifier.

Submodules
----------
numerics    bilinear resampling, seeded RNGs, finite-difference checks
tvl1        coarse-to-fine TV-L1 optical flow
jfp         joint-centred patches, residual flow patches and packing
graph       skeleton graphs and normalised adjacency
model       graph-convolutional network with explicit gradients
twostream   branch training, score fusion and metrics
synth       synthetic articulated-figure actions with analytic motion
formats     JFPC / JCKP containers and dataset files
bench       end-to-end synthetic benchmark
cli         ``jolo`` command-line tool
"""

__version__ = "0.1.0"
