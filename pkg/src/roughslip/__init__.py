"""Learned and classical micro solvers for wall laws of Stokes flow over rough walls.

Modules:

``geometry``        micro boxes, rough walls, discretized curves
``stokes_bie``      double layer Nystrom solver for interior Stokes flow
``riesz``           Riesz representors of the slip functionals
``dataset``         representor datasets (RWS1 files)
``fno``             geo-FNO with manual backpropagation and Adam
``macro_channel``   spectral slip-channel solver, reconstruction, interpolation
``hmm``             HMM fixed-point driver (Algorithms 1 and 2)
``reference``       resolved finite-difference reference on the rough channel
``metrics``         error family and Monte-Carlo bound checks
``cli``             command line entry point
"""

__version__ = "0.1.0"
