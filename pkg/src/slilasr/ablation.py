"""Ablation over conditioning variants and seeds.

For every seed one language identifier is trained, frozen, and shared by all
stage-two variants of that seed. The corpus is fixed by the global seed; the
ablation seeds vary model initialisation, dropout and batch order.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .asr import AsrModel, asr_train, evaluate_asr, utterance_codes
from .checkpoint import model_hash
from .lid import LidModel, evaluate_lid, lid_train


class AblationError(RuntimeError):
    pass


@dataclass
class RunResult:
    name: str
    seed: int
    mode: str
    position: str
    params: int
    dev_cer: float
    test_cer: float
    best_epoch: int
    seconds: float


@dataclass
class AblationResult:
    runs: list = field(default_factory=list)
    lid_accuracy: dict = field(default_factory=dict)   # seed -> dev accuracy
    lid_seconds: dict = field(default_factory=dict)

    def names(self):
        seen = []
        for r in self.runs:
            if r.name not in seen:
                seen.append(r.name)
        return seen

    def rows(self):
        """One summary row per configuration, in run order."""
        out = []
        for name in self.names():
            rs = [r for r in self.runs if r.name == name]
            out.append({
                "config": name, "mode": rs[0].mode, "position": rs[0].position,
                "params": rs[0].params, "seeds": len(rs),
                "dev_cer": float(np.mean([r.dev_cer for r in rs])),
                "test_cer": float(np.mean([r.test_cer for r in rs])),
                "train_seconds": float(sum(r.seconds for r in rs)),
            })
        return out

    def mean_test(self, name):
        vals = [r.test_cer for r in self.runs if r.name == name]
        return float(np.mean(vals)) if vals else float("nan")


def run_ablation(cfg, corpus, names, seeds, log=None):
    log = log or (lambda msg: None)
    result = AblationResult()
    for seed in seeds:
        start = time.perf_counter()
        lid = LidModel(cfg.lid_config(seed=seed))
        lid_train(lid, corpus.train, corpus.dev)
        _, acc = evaluate_lid(lid, corpus.dev)
        result.lid_accuracy[seed] = acc
        result.lid_seconds[seed] = time.perf_counter() - start
        log(f"seed {seed}: LID dev accuracy {acc:.4f}")
        lid_hash = model_hash(lid)
        for name in names:
            acfg = cfg.ablation_asr_config(name, seed)
            start = time.perf_counter()
            try:
                model = AsrModel(acfg)
                history = asr_train(model, corpus.train, corpus.dev, lid, acfg)
                if model_hash(lid) != lid_hash:
                    raise AblationError("language identifier changed during stage two")
                dev = evaluate_asr(model, corpus.dev, utterance_codes(model, corpus.dev, lid))
                test = evaluate_asr(model, corpus.test, utterance_codes(model, corpus.test, lid))
            except Exception as exc:
                raise AblationError(f"configuration {name} (seed {seed}) failed: {exc}") from exc
            best = next(r["epoch"] for r in history if r["best"])
            run = RunResult(name, seed, acfg.mode, acfg.position, model.num_parameters(),
                            dev.cer, test.cer, best, time.perf_counter() - start)
            result.runs.append(run)
            log(f"seed {seed} {name:<6} dev {100 * dev.cer:6.2f}  test {100 * test.cer:6.2f}  "
                f"best epoch {best}")
    return result


def _pct(x):
    return f"{100 * x:.2f}"


def format_tsv(result):
    lines = ["config\tmode\tposition\tparams\tseeds\tdev_cer\ttest_cer"]
    for r in result.rows():
        lines.append(f"{r['config']}\t{r['mode']}\t{r['position']}\t{r['params']}\t{r['seeds']}"
                     f"\t{_pct(r['dev_cer'])}\t{_pct(r['test_cer'])}")
    return "\n".join(lines) + "\n"


def format_runs_tsv(result):
    lines = ["config\tseed\tdev_cer\ttest_cer\tbest_epoch"]
    for r in result.runs:
        lines.append(f"{r.name}\t{r.seed}\t{r.dev_cer!r}\t{r.test_cer!r}\t{r.best_epoch}")
    return "\n".join(lines) + "\n"


def format_timing_tsv(result):
    lines = ["config\tseed\ttrain_seconds"]
    for seed, secs in result.lid_seconds.items():
        lines.append(f"lid\t{seed}\t{secs:.1f}")
    for r in result.runs:
        lines.append(f"{r.name}\t{r.seed}\t{r.seconds:.1f}")
    return "\n".join(lines) + "\n"


def comparisons(result):
    """The headline comparisons as (label, holds, blocking) triples."""
    out = []
    names = result.names()
    if "M3" in names and "none" in names:
        out.append(("M3 < none (mean test CER)", result.mean_test("M3") < result.mean_test("none"), True))
    if "M3" in names and "M1" in names:
        out.append(("M3 <= M1 (mean test CER)", result.mean_test("M3") <= result.mean_test("M1"), False))
    return out


def format_table(result):
    seeds = sorted(result.lid_accuracy)
    header = f"{'config':<8}{'mode':<9}{'position':<10}{'params':>9}{'dev CER %':>11}{'test CER %':>12}"
    lines = [f"Ablation over seeds {', '.join(map(str, seeds))} (CER as mean percent)", "",
             header, "-" * len(header)]
    for r in result.rows():
        lines.append(f"{r['config']:<8}{r['mode']:<9}{r['position']:<10}{r['params']:>9d}"
                     f"{_pct(r['dev_cer']):>11}{_pct(r['test_cer']):>12}")
    lines.append("")
    lines.append("LID dev accuracy: " + ", ".join(f"seed {s} {result.lid_accuracy[s]:.4f}"
                                                   for s in seeds))
    for label, holds, blocking in comparisons(result):
        tag = "required" if blocking else "reported only, not required"
        lines.append(f"{label}: {'yes' if holds else 'no'} ({tag})")
    lines.append("Training times are in the .timing.tsv sidecar.")
    return "\n".join(lines) + "\n"
