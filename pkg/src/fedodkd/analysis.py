"""Communication accounting and the computable part of the generalization bound.

Communication is counted in transmitted elements (parameters or logits), not
bytes. The bound report keeps the distribution-discrepancy and minimal-loss
terms as explicit fields that are ``None`` unless the caller supplies them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .nn_core import ModelSpec, param_count


def hoeffding_term(p: float, n_samples: int) -> float:
    """``sqrt(ln(2/p) / (2 n))``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    return math.sqrt(math.log(2.0 / p) / (2.0 * n_samples))


@dataclass
class CommEntry:
    """One round of traffic.

    ``per_client`` maps a role (``"client"``, ``"aux"``, ``"target"``) to the
    ``(upload, download)`` element counts of a single participant in that role;
    ``participants`` gives how many clients played it this round.
    """

    method: str
    per_client: dict[str, tuple[int, int]]
    participants: dict[str, int]

    @property
    def upload(self) -> int:
        return sum(self.per_client[r][0] * self.participants[r] for r in self.per_client)

    @property
    def download(self) -> int:
        return sum(self.per_client[r][1] * self.participants[r] for r in self.per_client)


@dataclass
class CommReport:
    method: str
    entries: list[CommEntry] = field(default_factory=list)

    @property
    def total_upload(self) -> int:
        return sum(e.upload for e in self.entries)

    @property
    def total_download(self) -> int:
        return sum(e.download for e in self.entries)

    def to_dict(self) -> dict:
        first = self.entries[0] if self.entries else None
        return {
            "method": self.method,
            "unit": "elements",
            "rounds": len(self.entries),
            "per_client_message": {} if first is None else {
                role: {"upload": up, "download": down} for role, (up, down) in first.per_client.items()
            },
            "per_round": [[e.upload, e.download] for e in self.entries],
            "total_upload": self.total_upload,
            "total_download": self.total_download,
        }


def comm_cost(
    method: str,
    spec_s: ModelSpec,
    spec_l: ModelSpec,
    C: int,
    n_active: int,
    n_active_strong: int,
    public_pool_size: int = 0,
    *,
    homogeneous_model: str = "aux",
    aux_rounds: bool = True,
) -> CommEntry:
    """Element counts of one round of ``method``.

    * FedAvg: each participant downloads and uploads the whole model.
    * DS-FL / FedMD: ``C`` logits per public sample, each way.
    * proposed: every active client exchanges ``|w_s|`` both ways in the
      auxiliary round; in the target round an active strong client downloads
      ``|w_s| + |w_l|`` and uploads ``|w_l|``.
    """
    ws, wl = param_count(spec_s), param_count(spec_l)
    if method == "fedavg_weak_only":
        return CommEntry(method, {"client": (ws, ws)}, {"client": n_active})
    if method == "fedavg_strong_only":
        return CommEntry(method, {"client": (wl, wl)}, {"client": n_active_strong})
    if method == "feddf":
        if homogeneous_model == "aux":
            return CommEntry(method, {"client": (ws, ws)}, {"client": n_active})
        return CommEntry(method, {"client": (wl, wl)}, {"client": n_active_strong})
    if method in ("dsfl", "fedmd"):
        msg = C * public_pool_size
        return CommEntry(method, {"client": (msg, msg)}, {"client": n_active})
    if method == "proposed":
        per = {"target": (wl, ws + wl)}
        n = {"target": n_active_strong}
        if aux_rounds:
            per = {"aux": (ws, ws), **per}
            n = {"aux": n_active, **n}
        return CommEntry(method, per, n)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ClientBound:
    client_id: int
    n_labeled: int
    n_combined: int
    empirical_loss: float
    sample_term: float | None
    sample_term_labeled_only: float | None
    discrepancy: float | None = None
    min_joint_loss: float | None = None


@dataclass
class BoundReport:
    p: float
    clients: list[ClientBound]
    mean_empirical_loss: float
    mean_sample_term: float
    partial_bound: float
    missing_terms: list[str]

    @property
    def partial(self) -> bool:
        return bool(self.missing_terms)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["partial"] = self.partial
        for c in out["clients"]:
            for key in ("discrepancy", "min_joint_loss"):
                if c[key] is None:
                    c[key] = "unavailable"
        return out


def bound_report(
    sizes: Mapping[int, tuple[int, int]],
    losses: Mapping[int, float],
    p: float = 0.05,
    discrepancy: Mapping[int, float] | None = None,
    min_joint_loss: Mapping[int, float] | None = None,
) -> BoundReport:
    """Assemble the per-strong-client terms of the target-model bound.

    ``sizes`` maps client id to ``(n_labeled, n_combined)`` where the combined
    count includes the unlabeled samples used for distillation. Clients with no
    data are listed but contribute nothing to the means. The reported
    ``partial_bound`` is ``mean(loss + sample term)`` plus half the mean
    discrepancy and the mean minimal joint loss when those are supplied for every
    client; otherwise the missing terms are named in ``missing_terms``.
    """
    discrepancy = discrepancy or {}
    min_joint_loss = min_joint_loss or {}
    rows = []
    for cid in sorted(sizes):
        n_lab, n_comb = sizes[cid]
        rows.append(
            ClientBound(
                cid,
                int(n_lab),
                int(n_comb),
                float(losses.get(cid, math.nan)),
                hoeffding_term(p, n_comb) if n_comb > 0 else None,
                hoeffding_term(p, n_lab) if n_lab > 0 else None,
                discrepancy.get(cid),
                min_joint_loss.get(cid),
            )
        )
    usable = [r for r in rows if r.sample_term is not None and math.isfinite(r.empirical_loss)]
    mean_loss = _mean([r.empirical_loss for r in usable])
    mean_term = _mean([r.sample_term for r in usable])
    bound = mean_loss + mean_term
    missing = []
    if usable and all(r.discrepancy is not None for r in usable):
        bound += 0.5 * _mean([r.discrepancy for r in usable])
    else:
        missing.append("discrepancy")
    if usable and all(r.min_joint_loss is not None for r in usable):
        bound += _mean([r.min_joint_loss for r in usable])
    else:
        missing.append("min_joint_loss")
    return BoundReport(p, rows, mean_loss, mean_term, bound, missing)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan
