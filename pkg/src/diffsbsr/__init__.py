"""Zero-shot sketch-based 3D shape retrieval with a frozen diffusion
feature extractor, multimodal conditioning, and a dynamically scaled
pair-similarity objective."""

__version__ = "0.1.0"
