"""Central finite-difference checks for every differentiable operation.

Each registered case builds a fresh random instance: a list of leaf
Parameters and a closure computing a scalar from them. The analytic gradient
from one backward pass is compared against ``(f(x+e) - f(x-e)) / 2e`` on
(a sample of) the leaf coordinates, using the norm-wise relative error
``|g_a - g_n| / max(|g_a|, |g_n|, floor)``. The floor keeps parameters whose
true gradient is exactly zero (a bias feeding batch norm) from turning
finite-difference roundoff into a large relative error.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .conditioning import (
    FilmGenerator,
    SeBlock,
    append_onehot,
    film_apply,
    generate_film_params,
    se_apply,
    se_film_apply,
    slil_apply,
)
from .layers import BatchNorm1d, Conv1dLayer, LinearLayer, RecurrentLayer, batch_norm, dropout
from .losses import ce_loss, ctc_loss, ctc_loss_batch
from .tensor import Parameter, Tape, Tensor, backward

EPS = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-5


def numeric_grad(loss_fn, leaf, coords, eps=EPS):
    orig = leaf.data
    flat = orig.reshape(-1)
    out = np.zeros(len(coords))
    for n, i in enumerate(coords):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        leaf.assign(bumped.reshape(orig.shape))
        f_plus = loss_fn().item()
        bumped[i] = flat[i] - eps
        leaf.assign(bumped.reshape(orig.shape))
        f_minus = loss_fn().item()
        out[n] = (f_plus - f_minus) / (2 * eps)
    leaf.assign(orig)
    return out


def relative_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(loss_fn, leaves, rng=None, max_coords=None, eps=EPS):
    """Max relative error over ``leaves`` between tape gradients and finite differences.

    With ``max_coords`` set, that many coordinates are sampled across all
    leaves together (every leaf gets at least one), which keeps whole-model
    cases cheap.
    """
    rng = rng or np.random.default_rng(0)
    for leaf in leaves:
        leaf.grad = None
    with Tape():
        loss = loss_fn()
    backward(loss)
    picks = [np.arange(leaf.size) for leaf in leaves]
    total = sum(leaf.size for leaf in leaves)
    if max_coords is not None and total > max_coords:
        owner = np.repeat(np.arange(len(leaves)), [leaf.size for leaf in leaves])
        chosen = rng.choice(total, size=max_coords, replace=False)
        offsets = np.concatenate([[0], np.cumsum([leaf.size for leaf in leaves])])
        picks = []
        for j, leaf in enumerate(leaves):
            mine = np.sort(chosen[owner[chosen] == j] - offsets[j])
            picks.append(mine if mine.size else rng.integers(leaf.size, size=1))
    worst = 0.0
    for leaf, coords in zip(leaves, picks):
        analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad
        ref = analytic.reshape(-1)[coords]
        err = relative_error(ref, numeric_grad(loss_fn, leaf, coords, eps))
        if err > TOLERANCE:
            # a ReLU input within eps of zero makes the central difference
            # straddle the kink; one retry with a much smaller step
            err = min(err, relative_error(ref, numeric_grad(loss_fn, leaf, coords, eps / 100)))
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

REGISTRY = {}


def register(name, max_coords=None):
    def deco(builder):
        REGISTRY[name] = (builder, max_coords)
        return builder
    return deco


def _leaf(rng, shape, lo=-2.0, hi=2.0):
    return Parameter(rng.uniform(lo, hi, size=shape))


def _project(out, rng):
    """Scalar ``sum(out * R)`` with a fixed random R, so no gradient is trivially zero."""
    weights = Tensor(rng.normal(size=out.shape))
    return lambda t: tn.reduce("sum", tn.mul(t, weights))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-2.0, 2.0, size=shape)
    return Parameter(np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x))


def _elementwise_case(kind):
    def builder(rng):
        shape = (3, 4)
        if kind in ("add", "sub", "mul"):
            a, b = _leaf(rng, shape), _leaf(rng, (1, 4))
            leaves = [a, b]
            fn = lambda: tn.elementwise(kind, a, b)  # noqa: E731
        else:
            if kind == "log":
                a = _leaf(rng, shape, 0.1, 2.0)
            elif kind == "relu":
                a = _away_from_zero(rng, shape)
            else:
                a = _leaf(rng, shape)
            leaves = [a]
            fn = lambda: tn.elementwise(kind, a)  # noqa: E731
        proj = _project(fn(), rng)
        return (lambda: proj(fn())), leaves
    return builder


for _kind in tn.ELEMENTWISE_KINDS:
    register(f"elementwise.{_kind}")(_elementwise_case(_kind))


@register("matmul")
def _matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    proj = _project(tn.matmul(a, b), rng)
    return (lambda: proj(tn.matmul(a, b))), [a, b]


def _reduce_case(kind):
    def builder(rng):
        a = _leaf(rng, (3, 4, 2))
        proj = _project(tn.reduce(kind, a, axis=1), rng)
        return (lambda: proj(tn.reduce(kind, a, axis=1))), [a]
    return builder


for _kind in ("sum", "mean", "max"):
    register(f"reduce.{_kind}")(_reduce_case(_kind))


@register("structure.reshape_transpose")
def _structure(rng):
    a = _leaf(rng, (2, 3, 4))

    def fn():
        return tn.transpose(tn.reshape(a, (6, 4)), (1, 0))

    proj = _project(fn(), rng)
    return (lambda: proj(fn())), [a]


@register("structure.concat_slice_broadcast")
def _structure2(rng):
    a, b, c = _leaf(rng, (2, 3)), _leaf(rng, (2, 2)), _leaf(rng, (1, 5))

    def fn():
        cat = tn.concat([a, b], axis=1)
        return tn.add(tn.slice_axis(cat, 1, 0, 5), tn.broadcast_to(c, (2, 5)))

    proj = _project(fn(), rng)
    return (lambda: proj(fn())), [a, b, c]


@register("log_softmax")
def _log_softmax(rng):
    a = _leaf(rng, (3, 5))
    proj = _project(tn.log_softmax(a), rng)
    return (lambda: proj(tn.log_softmax(a))), [a]


@register("linear")
def _linear(rng):
    layer = LinearLayer(4, 3, rng)
    x = _leaf(rng, (2, 5, 4))
    proj = _project(layer(x), rng)
    return (lambda: proj(layer(x))), [x, layer.weight, layer.bias]


@register("conv1d")
def _conv(rng):
    stride = int(rng.integers(1, 3))
    layer = Conv1dLayer(3, 2, 3, stride, rng)
    x = _leaf(rng, (2, 3, 8))
    proj = _project(layer(x), rng)
    return (lambda: proj(layer(x))), [x, layer.weight, layer.bias]


@register("recurrent.gru")
def _gru(rng):
    layer = RecurrentLayer(3, 2, rng, bidirectional=True)
    for p in layer.parameters():
        p.assign(rng.uniform(-1.0, 1.0, size=p.shape))
    x = _leaf(rng, (2, 4, 3))
    lengths = np.array([4, int(rng.integers(1, 5))])
    proj = _project(layer(x, lengths), rng)
    return (lambda: proj(layer(x, lengths))), [x] + layer.parameters()


@register("batchnorm.train")
def _bn_train(rng):
    x = _leaf(rng, (3, 4, 2))
    gamma, beta = _leaf(rng, (2,)), _leaf(rng, (2,))
    mask = np.ones((3, 4))
    mask[1, 2:] = 0.0
    proj = _project(x, rng)
    return (lambda: proj(batch_norm(x, gamma, beta, 1e-5, mask)[0])), [x, gamma, beta]


@register("batchnorm.eval")
def _bn_eval(rng):
    layer = BatchNorm1d(2)
    layer.running_mean = rng.normal(size=2)
    layer.running_var = rng.uniform(0.5, 2.0, size=2)
    layer.eval()
    x = _leaf(rng, (3, 4, 2))
    proj = _project(x, rng)
    return (lambda: proj(layer(x))), [x, layer.scale, layer.shift]


@register("dropout")
def _dropout(rng):
    x = _leaf(rng, (4, 5))
    seed = int(rng.integers(1 << 30))
    proj = _project(x, rng)
    return (lambda: proj(dropout(x, 0.3, np.random.default_rng(seed), True))), [x]


@register("loss.ce")
def _ce(rng):
    logits = _leaf(rng, (4, 3))
    targets = rng.integers(0, 3, size=4)
    return (lambda: ce_loss(tn.log_softmax(logits), targets)), [logits]


@register("loss.ctc")
def _ctc(rng):
    T = int(rng.integers(3, 7))
    logits = _leaf(rng, (T, 4))
    m = int(rng.integers(1, 3))
    target = list(rng.integers(1, 4, size=m))
    return (lambda: ctc_loss(tn.log_softmax(logits), target)), [logits]


@register("loss.ctc_batch")
def _ctc_batch(rng):
    logits = _leaf(rng, (2, 6, 4))
    lengths = np.array([6, 4])
    targets = [list(rng.integers(1, 4, size=2)), [int(rng.integers(1, 4))]]
    return (lambda: ctc_loss_batch(tn.log_softmax(logits), lengths, targets)), [logits]


def _onehot_codes(rng, B, D=3):
    codes = np.zeros((B, D))
    codes[np.arange(B), rng.integers(0, D, size=B)] = 1.0
    return codes


@register("film.generate")
def _film_gen(rng):
    gen = FilmGenerator(3, 2, 4, rng, hidden=5)
    codes = _onehot_codes(rng, 2)

    def fn():
        p = generate_film_params(gen, codes)
        return tn.concat([p.gamma, p.beta], axis=1)

    proj = _project(fn(), rng)
    return (lambda: proj(fn())), gen.parameters()


@register("film.apply")
def _film_apply(rng):
    x, gamma, beta = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4), -1, 1), _leaf(rng, (2, 4), -1, 1)
    proj = _project(x, rng)
    return (lambda: proj(film_apply(x, gamma, beta))), [x, gamma, beta]


@register("se.apply")
def _se(rng):
    block = SeBlock(4, rng, reduction=2)
    x = _leaf(rng, (2, 5, 4))
    lengths = np.array([5, 3])
    proj = _project(x, rng)
    return (lambda: proj(se_apply(block, x, lengths))), [x] + block.parameters()


def _composite(apply_fn):
    def builder(rng):
        block = SeBlock(4, rng, reduction=2)
        x = _leaf(rng, (2, 5, 4))
        gamma, beta = _leaf(rng, (4,), -1, 1), _leaf(rng, (4,), -1, 1)
        proj = _project(x, rng)
        return (lambda: proj(apply_fn(gamma, beta, block, x))), [x, gamma, beta] + block.parameters()
    return builder


register("slil")(_composite(slil_apply))
register("se_film")(_composite(se_film_apply))


@register("append_onehot")
def _append(rng):
    x = _leaf(rng, (2, 3, 4))
    codes = _onehot_codes(rng, 2)
    out = append_onehot(x, codes)
    proj = _project(out, rng)
    return (lambda: proj(append_onehot(x, codes))), [x]


def _tiny_features(rng, B=2, T=7, F=3):
    feats = rng.uniform(-2.0, 2.0, size=(B, T, F))
    lengths = np.array([T, T - 1])
    return feats, lengths


def _asr_case(mode, position):
    def builder(rng):
        from .asr import AsrConfig, AsrModel, asr_forward

        cfg = AsrConfig(n_features=3, vocab_size=4, conv_layers=1, hidden=2, layers=2,
                        dropout=0.0, mode=mode, position=position, se_reduction=2,
                        film_hidden=3, seed=int(rng.integers(1 << 30)))
        model = AsrModel(cfg)
        feats, lengths = _tiny_features(rng)
        codes = _onehot_codes(rng, 2)
        targets = [[1, 2], [3]]
        out_lens = model.out_lengths(lengths)

        def fn():
            lp = asr_forward(model, feats, codes if mode != "none" else None, lengths)
            return ctc_loss_batch(lp, out_lens, targets)

        return fn, model.parameters()
    return builder


register("asr.none", max_coords=30)(_asr_case("none", "before"))
register("asr.append", max_coords=30)(_asr_case("append", "before"))
for _mode in ("film", "slil", "se_film"):
    for _pos in ("before", "after"):
        register(f"asr.{_mode}.{_pos}", max_coords=30)(_asr_case(_mode, _pos))


@register("lid.forward", max_coords=30)
def _lid(rng):
    from .lid import LidConfig, LidModel, lid_forward

    model = LidModel(LidConfig(n_features=3, conv_channels=2, hidden=2, dropout=0.0,
                               seed=int(rng.integers(1 << 30))))
    feats = rng.uniform(-2.0, 2.0, size=(3, 9, 3))
    lengths = np.array([9, 8, 7])
    targets = np.array([0, 1, 2])
    return (lambda: ce_loss(lid_forward(model, feats, lengths), targets)), model.parameters()


# --------------------------------------------------------------------------
# suite runner
# --------------------------------------------------------------------------

@dataclass
class GradcheckResult:
    name: str
    instances: int
    max_rel_error: float
    seconds: float
    error: str = ""

    @property
    def passed(self):
        return not self.error and self.max_rel_error <= TOLERANCE


def run_suite(instances=20, seed=0, names=None, registry=None):
    registry = REGISTRY if registry is None else registry
    results = []
    for name in (names or list(registry)):
        builder, max_coords = registry[name]
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        start = time.perf_counter()
        worst, err = 0.0, ""
        try:
            for _ in range(instances):
                fn, leaves = builder(rng)
                worst = max(worst, check_gradients(fn, leaves, rng, max_coords))
        except Exception as exc:  # a crashing case is a failed entry, not a crashed suite
            err = f"{type(exc).__name__}: {exc}"
        results.append(GradcheckResult(name, instances, worst, time.perf_counter() - start, err))
    return results


def format_report(results):
    lines = [f"{'operation':<34} {'instances':>9} {'max rel err':>12}  status"]
    for r in results:
        status = "ok" if r.passed else ("ERROR " + r.error if r.error else "FAIL")
        lines.append(f"{r.name:<34} {r.instances:>9d} {r.max_rel_error:>12.3e}  {status}")
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} operations within {TOLERANCE:g}")
    return "\n".join(lines)
