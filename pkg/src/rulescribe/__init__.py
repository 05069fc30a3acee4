"""rulescribe: explain mined knowledge-graph rules with LLMs, judge the
explanations, and curate ground-truth datasets for fine-tuning."""

__version__ = "0.1.0"
