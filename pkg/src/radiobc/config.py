"""Tunable constants hidden inside the asymptotic bounds.

Every protocol reads its constants from one :class:`Constants` value so an
experiment can pin or override them (``key=value,key=value``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Constants:
    # Decay runs that must succeed w.h.p. use this many phases per log n
    decay_whp_factor: int = 4
    # recruiting iterations = factor * log^2 n
    recruit_iterations_factor: int = 4
    # Decay phases in the blue reply window of each recruiting iteration
    recruit_reply_phases: int = 2
    # assignment epochs per rank = factor * log n
    assignment_epoch_factor: int = 8
    # distributed GST construction must finish within C * D * log^4 n rounds
    gst_round_constant: int = 4096
    # pipeline budgets: C * (D + k log n + log^6 n)
    budget_constant: int = 64
    # fixed length of one MMV stage inside a ring: a * width + m * batch * log n + b * log^2 n
    mmv_depth_factor: int = 4
    mmv_message_factor: int = 12
    mmv_log_factor: int = 24
    # inter-ring FEC stage: factor * max(batch, log n) Decay phases
    fec_phase_factor: int = 4
    # generation mode: generation size c_b log n, strip height c_w log^2 n, step c_s log^2 n
    generation_factor: int = 1
    strip_factor: int = 1
    step_factor: int = 24
    # high-probability exponent of the gathering algorithm
    gather_c: int = 1
    # ring width override (0 = use max(1, ceil(D / log^4 n)))
    ring_width: int = 0

    def with_overrides(self, text: str | dict | None) -> "Constants":
        if not text:
            return self
        pairs = text.items() if isinstance(text, dict) else (
            p.split("=", 1) for p in str(text).replace(";", ",").split(",") if p.strip())
        known = {f.name for f in fields(self)}
        upd = {}
        for key, value in pairs:
            key = key.strip()
            if key not in known:
                raise KeyError(f"unknown constant {key!r}; known: {sorted(known)}")
            upd[key] = int(value)
        return replace(self, **upd)

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


DEFAULT = Constants()
