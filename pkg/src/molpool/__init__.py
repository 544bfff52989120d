"""Graph neural networks for molecules, built on a small autodiff core.

The package covers the full pipeline: a SMILES subset parser and molecule
generators (molgraph), a taped autodiff engine (tensor), message-passing
layers and graph-level pooling (gnn, pooling), training and evaluation
(train), gradient verification (gradcheck), and a command line front end
(cli) for the pooling-function experiments.
"""

__version__ = "0.1.0"
