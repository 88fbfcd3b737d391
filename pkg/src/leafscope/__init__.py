"""Fine-tuning pipeline for multi-class leaf disease classification."""

__version__ = "0.1.0"

LEAF_CLASSES = ("AC", "BC", "CW", "DB", "GM", "HL", "PM", "SM")
