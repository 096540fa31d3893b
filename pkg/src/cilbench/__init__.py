"""cilbench: a desk-scale class-incremental learning workbench.

Five incremental learners (replay, icarl, wa, der, memo) trained over
Base-x/Inc-y task streams with herding exemplar buffers, byte-exact memory
accounting that makes model storage and exemplar storage interchangeable,
memory-aware metrics (AUC over performance-memory curves, accuracy per MB),
and network-behavior probes (block gradient norms, block shift, CKA).
"""

__version__ = "0.1.0"
