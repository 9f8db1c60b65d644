"""Small fixtures shared by several test modules."""
import numpy as np

from cofitune.data import Example, SuiteSizes, TaskConfig, generate_suite
from cofitune.model import ModelConfig, init_params
from cofitune.tensor import SeededRng

TINY = ModelConfig(vocab_size=99, embed_dim=16, num_heads=2, ffn_dim=24, num_layers=8, max_seq_len=256)
TINY_SIZES = SuiteSizes(spec_train=24, spec_test=6, facts=8, rs_train=6, rs_test=3, instruct_train=8,
                        instruct_test=4)


def tiny_params(seed=0, dtype=np.float32, config=TINY):
    return init_params(config, SeededRng(seed, 9), std=0.1, dtype=dtype)


def tiny_suite(seed=0):
    return generate_suite(seed, TINY_SIZES, TaskConfig(template="compact"))


def toy_examples(n=6):
    return [Example(f"Add {i} and {i + 1}.", "", str(2 * i + 1)) for i in range(n)]
