"""Speaker-verification toolkit built around a linear-regression speaker space.

Front-ends turn utterances into fixed-length embeddings (factor-analysis
subspace over background-model statistics, or averaged classifier
activations); back-ends map embeddings into a scoring space and compare
speaker models; the evaluation layer runs randomized repeated test conditions
and reports detection metrics.
"""

__version__ = "0.1.0"
