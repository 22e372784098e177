"""Few-shot keyword spotting toolkit.

Subpackages cover the full pipeline: WAV audio handling (`audio`), MFCC
feature extraction (`features`), a small reverse-mode autodiff core
(`tensor`), the four embedding networks (`nets`), episode math
(`protonet`), dataset synthesis and episode sampling (`dataset`), the
episodic trainer (`trainer`) and the command line surface (`cli`).
"""

__version__ = "0.1.0"
