"""Joint pretraining over free text, section headings, and infobox triples.

Pipeline: parse or synthesize a multi-format corpus, align fragments with
their infobox triples via TF-IDF, assemble corrupted pretraining examples,
train a small transformer encoder with the joint MLM + triple-classification
+ title-matching objective, and fine-tune on five downstream task schemes.
"""

__version__ = "0.1.0"
