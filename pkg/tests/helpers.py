"""Small bundles and corpora shared by the test modules."""
import numpy as np

from labelgen.data import TaskSpec
from labelgen.model import DecoderConfig, ExtractorConfig, init_weights
from labelgen.numerics import Tensor, attention, conv2d, cross_entropy, depthwise_conv2d, gelu, layer_norm, linear, ops, softmax
from labelgen.tokenizer import build_vocabulary, max_sequence_length

TOY_TASKS = (
    TaskSpec("grading", ("benign", "low grade cancer", "high grade cancer"), True, 0),
    TaskSpec("typing", ("fat", "muscle", "benign"), False),
)
TOY_LABELS = [l for t in TOY_TASKS for l in t.labels]


def toy_bundle(setting="E_TAG", d_model=8, heads=2, layers=1, depths=(1,), widths=(8,), kernel_size=3,
               dtype=np.float64, seed=0, tasks=TOY_TASKS, n_prefix=1, randomize=True):
    """Toy bundle; ``randomize`` also draws gains/biases so no term is trivially zero."""
    vocab = build_vocabulary([l for t in tasks for l in t.labels])
    T = max_sequence_length([l for t in tasks for l in t.labels])
    dec = DecoderConfig(layers, heads, d_model, len(vocab), T + n_prefix - 1)
    ext = ExtractorConfig(tuple(depths), tuple(widths), kernel_size, 4)
    b = init_weights(ext, dec, tasks, setting, seed, vocab, T, n_prefix=n_prefix, dtype=dtype)
    if randomize:
        rng = np.random.default_rng(seed + 100)
        for name, p in b.params.items():
            if name.endswith((".bias", ".shift")):
                p.data[...] = 0.1 * rng.standard_normal(p.shape)
            elif name.endswith(".gain"):
                p.data[...] = 1.0 + 0.1 * rng.standard_normal(p.shape)
            else:
                p.data[...] = 0.3 * rng.standard_normal(p.shape)
    return b


def toy_images(n=2, size=16, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).random((n, 3, size, size)).astype(dtype)


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def table_decoder(table):
    """Stub step function: logits for step s are ``table[s]`` for every row."""

    def step(bundle, prefix, ids):
        row = np.asarray(table[min(ids.shape[1], len(table) - 1)], dtype=np.float64)
        return Tensor(np.tile(row, (prefix.shape[0], 1)))

    return step


# every differentiable op with small shapes, as (fn, input shapes)
OP_CASES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 1), (3, 4)]),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
    "div": (lambda a, b: a / (ops.exp(b) + 1.0), [(2, 3), (1, 3)]),
    "matmul": (lambda a, b: a @ b, [(2, 3, 4), (4, 2)]),
    "mean": (lambda a: a.mean(axis=1), [(3, 4)]),
    "sum": (lambda a: a.sum(axis=0, keepdims=True), [(3, 4)]),
    "transpose": (lambda a: a.transpose(1, 0, 2) * a.transpose(1, 0, 2), [(2, 3, 2)]),
    "getitem": (lambda a: a[1:, ::2] * 3.0, [(3, 4)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [(2, 2), (2, 3)]),
    "gelu": (gelu, [(4, 3)]),
    "softmax": (softmax, [(3, 5)]),
    "log_softmax": (ops.log_softmax, [(3, 5)]),
    "layer_norm": (lambda x, g, s: layer_norm(x, g, s), [(3, 5), (5,), (5,)]),
    "linear": (lambda x, w, b: linear(x, w, b), [(2, 3, 4), (5, 4), (5,)]),
    "attention": (lambda q, k, v: attention(q, k, v, causal_mask=True), [(2, 4, 3), (2, 4, 3), (2, 4, 2)]),
    "conv2d": (lambda x, k, b: conv2d(x, k, b, stride=2, padding=1), [(2, 2, 5, 5), (3, 2, 3, 3), (3,)]),
    "depthwise_conv2d": (lambda x, k, b: depthwise_conv2d(x, k, b, padding=1), [(2, 3, 4, 4), (3, 1, 3, 3), (3,)]),
    "cross_entropy": (lambda z: cross_entropy(z, np.array([[1, 0, -100], [2, 2, 0]])), [(2, 3, 4)]),
    "embedding": (lambda t: ops.embedding(t, np.array([[0, 2, 2]])), [(3, 4)]),
}
