"""coforget: a desk-scale lab for training classifiers under label noise.

Two heterogeneous networks teach each other asymmetrically while a periodic
selective-unlearning pass identifies and forgets samples the networks have
memorized with wrong labels. Everything runs on synthetic blob data with a
pluggable zero-shot oracle, so the whole pipeline is reproducible and
verifiable by property tests.
"""

__version__ = "0.1.0"
