import csv
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from src.config import RunConfig
from src.errors import ConfigurationError, LatentSegError
from src.hooks.progressListener import ProgressListener
from src.hooks.subTaskProgressListener import SubTaskProgressListener
from src.training.experiment import prepare_data, run_experiment
from src.training.parallel import run_members
from src.utils import slugify

# Latent counts of the latent class sweep
LATENT_SWEEP = [2, 4, 6, 10, 20, 50]

CSV_COLUMNS = ["suite", "member", "status", "latent_mode", "max_latent", "miou_mean", "miou_std",
               "effective_latent_t01_mean", "effective_latent_t09_mean", "dominance_fraction_mean",
               "grouping_agreement_mean", "completed", "failed", "run_dir", "message"]

@dataclass
class SuiteMember:
    suite: str
    name: str
    overrides: Dict[str, Any]

def _loss_terms(latent: bool, consistency: bool, adv_labeled: bool, adv_unlabeled: bool) -> Dict[str, Any]:
    return { "use_latent": latent, "use_consistency": consistency, "adv_labeled": adv_labeled, "adv_unlabeled": adv_unlabeled }

def loss_term_suite() -> List[SuiteMember]:
    return [
        SuiteMember("loss_terms", "ce", _loss_terms(False, False, False, False)),
        SuiteMember("loss_terms", "ce+latent", _loss_terms(True, False, False, False)),
        SuiteMember("loss_terms", "ce+latent+cons", _loss_terms(True, True, False, False)),
        SuiteMember("loss_terms", "ce+adv_labeled", _loss_terms(False, False, True, False)),
        SuiteMember("loss_terms", "ce+adv", _loss_terms(False, False, True, True)),
        SuiteMember("loss_terms", "full", _loss_terms(True, True, True, True)),
    ]

def latent_count_suite() -> List[SuiteMember]:
    return [ SuiteMember("latent_count", f"latent_{count}", { "latent_mode": "learned", "max_latent": count })
             for count in LATENT_SWEEP ]

def latent_mode_suite() -> List[SuiteMember]:
    return [
        SuiteMember("latent_mode", "manual", { "latent_mode": "manual", "consistency_variant": "cross_entropy" }),
        SuiteMember("latent_mode", "identity", { "latent_mode": "identity", "consistency_variant": "cross_entropy" }),
        SuiteMember("latent_mode", "identity+symmetric_kl", { "latent_mode": "identity", "consistency_variant": "symmetric_kl" }),
        SuiteMember("latent_mode", "learned", { "latent_mode": "learned", "consistency_variant": "cross_entropy" }),
    ]

SUITES = {
    "loss_terms": loss_term_suite,
    "latent_count": latent_count_suite,
    "latent_mode": latent_mode_suite,
}

SUITE_ALIASES = {
    "table3": "loss_terms",
    "table4": "latent_count",
    "table5": "latent_mode",
}

def suite_names() -> List[str]:
    return sorted(SUITES) + sorted(SUITE_ALIASES) + ["all"]

def get_suite(name: str) -> List[SuiteMember]:
    name = SUITE_ALIASES.get(name, name)

    if name == "all":
        return [ member for suite in SUITES.values() for member in suite() ]
    if name not in SUITES:
        raise ConfigurationError(f"Unknown suite {name}, expected one of {', '.join(suite_names())}")
    return SUITES[name]()

def _member_dir(out_dir: str, member: SuiteMember) -> str:
    return os.path.join(out_dir, member.suite, slugify(member.name.replace("+", "-")))

def _row(member: SuiteMember, cfg: RunConfig, run_dir: str, status: str, summary: Dict[str, Any] = None,
         message: str = "") -> Dict[str, Any]:
    row = { "suite": member.suite, "member": member.name, "status": status, "latent_mode": cfg.latent_mode,
            "max_latent": cfg.max_latent, "run_dir": run_dir, "message": message }

    for column in CSV_COLUMNS:
        if summary is not None and column in summary:
            row[column] = summary[column]
    return row

def run_member(cfg_dict: Dict[str, Any], data_root: str, run_dir: str, suite: str, name: str,
               listener: ProgressListener = None) -> Dict[str, Any]:
    """
    Run one suite member in isolation. Top level so process pools can pickle it.
    """
    member = SuiteMember(suite, name, {})
    cfg = RunConfig.from_dict(cfg_dict)

    try:
        result = run_experiment(cfg, data_root, run_dir, listener=listener)
    except LatentSegError as e:
        return _row(member, cfg, run_dir, "error", message=f"{type(e).__name__}: {e}")

    status = "failed" if result.failed else "ok"
    return _row(member, cfg, run_dir, status, result.summary)

def ablation_matrix(cfg_base: RunConfig, data_root: str, out_dir: str, suite: str = "loss_terms", workers: int = 1,
                    listener: ProgressListener = None) -> List[Dict[str, Any]]:
    """
    Run every member of a suite in its own run directory and write <out_dir>/ablation.csv.
    Latent counts above the number of semantic classes are skipped unless allow_latent_overflow is set.
    """
    cfg_base.validate()
    members = get_suite(suite)
    semantic_count = prepare_data(cfg_base, data_root).train.semantic_count

    rows: List[Optional[Dict[str, Any]]] = [None] * len(members)
    pending = []

    for i, member in enumerate(members):
        cfg = cfg_base.update(**member.overrides).validate()
        run_dir = _member_dir(out_dir, member)

        if cfg.max_latent > semantic_count and not cfg.allow_latent_overflow and "max_latent" in member.overrides:
            rows[i] = _row(member, cfg, run_dir, "skipped",
                           message=f"{cfg.max_latent} latent classes exceed {semantic_count} semantic classes")
            continue
        pending.append((i, (cfg.to_dict(), data_root, run_dir, member.suite, member.name)))

    print(f"Running {len(pending)} of {len(members)} members of suite {suite}")

    if workers > 1:
        results = run_members(run_member, [ args for _, args in pending ], workers)
    else:
        results = []
        for k, (_, args) in enumerate(pending):
            sub_listener = SubTaskProgressListener(listener, len(pending), k, 1) if listener is not None else None
            results.append(run_member(*args, listener=sub_listener))

            if sub_listener is not None:
                sub_listener.on_finished()

    for (i, _), row in zip(pending, results):
        rows[i] = row

    os.makedirs(out_dir, exist_ok=True)
    write_ablation_csv(os.path.join(out_dir, "ablation.csv"), rows)
    return rows

def write_ablation_csv(path: str, rows: List[Dict[str, Any]]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()

        for row in rows:
            writer.writerow({ column: row.get(column, "") for column in CSV_COLUMNS })
