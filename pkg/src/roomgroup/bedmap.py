"""Sequential bedroom-group to bed-type assignment under coverage constraints.

Groups are processed one at a time in group-id order.  At each step the
predictor is offered exactly the bed types with remaining inventory; its
choice is decremented and removed at zero, which guarantees a one-to-one
mapping.  Predictor backends are pluggable: a ground-truth oracle for tests,
a deterministic first-option fallback, and a remote HTTP service.
"""

from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass, field

import requests

from .catalog import canonical_label
from .errors import (
    EmptyInventory,
    InventoryExhausted,
    PredictorViolation,
    RemoteFailure,
)

TOKEN_ENV_VAR = "ROOMGROUP_PREDICTOR_TOKEN"


@dataclass(frozen=True)
class BedInventory:
    """Remaining count per bed-type string; keys canonicalized, counts > 0."""

    counts: dict[str, int]

    def __post_init__(self) -> None:
        for bed, count in self.counts.items():
            if count < 1:
                raise EmptyInventory(f"bed type '{bed}' has non-positive count {count}")

    def total(self) -> int:
        return sum(self.counts.values())


def build_frequency_dict(bed_types) -> BedInventory:
    """Count bed-type multiplicities, preserving first-appearance order."""
    beds = [canonical_label(b) for b in bed_types]
    if not beds:
        raise EmptyInventory("bed-type list is empty")
    return BedInventory(counts=dict(Counter(beds)))


@dataclass(frozen=True)
class BedroomGroup:
    group_id: str
    image_ids: tuple[str, ...]
    image_uris: tuple[str, ...] = ()


@dataclass(frozen=True)
class TraceStep:
    group_id: str
    options: tuple[str, ...]
    choice: str


@dataclass
class BedAssignment:
    """Per-group bed choices plus the full decision trace and leftovers."""

    assignments: dict[str, str]
    trace: list[TraceStep] = field(default_factory=list)
    leftover: dict[str, int] = field(default_factory=dict)


class PredictorBackend:
    """Contract: pick one bed type out of ``options`` for a group of images."""

    def set_group(self, group_id: str) -> None:
        """Context hook: the id of the group about to be predicted."""

    def predict(self, image_ids, image_uris, options) -> str:
        raise NotImplementedError


class FirstOption(PredictorBackend):
    """Deterministic fallback: always the first remaining option."""

    def predict(self, image_ids, image_uris, options) -> str:
        return options[0]


class OracleFromTruth(PredictorBackend):
    """Test-only predictor that answers from a per-image ground-truth bed map.

    Majority vote over the group's images; falls back to the first option if
    the true bed type is no longer available.
    """

    def __init__(self, image_to_bed: dict[str, str]):
        self._image_to_bed = {k: canonical_label(v) for k, v in image_to_bed.items()}

    def predict(self, image_ids, image_uris, options) -> str:
        votes = Counter(
            self._image_to_bed[i] for i in image_ids if i in self._image_to_bed
        )
        for bed, _ in votes.most_common():
            if bed in options:
                return bed
        return options[0]


class RemoteService(PredictorBackend):
    """Wire client for a remote bed-type predictor."""

    def __init__(self, endpoint: str, retries: int = 2, timeout: float = 30.0,
                 token: str | None = None):
        self.endpoint = endpoint
        self.retries = retries
        self.timeout = timeout
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self._group_id = "bedroom-group"

    def set_group(self, group_id: str) -> None:
        self._group_id = group_id

    def predict(self, image_ids, image_uris, options) -> str:
        return remote_predict(
            self._group_id,
            list(image_uris) or list(image_ids),
            list(options),
            self.endpoint,
            token=self.token,
            retries=self.retries,
            timeout=self.timeout,
        )


def _natural_key(group_id: str):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", group_id)]


def map_spaces(
    groups, inventory: BedInventory, predictor: PredictorBackend
) -> BedAssignment:
    """Assign one bed type per bedroom group, consuming inventory counts.

    Groups are processed in group-id order.  A single remaining option is
    assigned without consulting the predictor.  Raises
    :class:`InventoryExhausted` when groups outnumber the inventory and
    :class:`PredictorViolation` when a predictor answers off-menu; leftover
    inventory is reported, not an error.
    """
    groups = sorted(groups, key=lambda g: _natural_key(g.group_id))
    if not groups:
        raise ValueError("at least one bedroom group required")
    for group in groups:
        if not group.image_ids:
            raise ValueError(f"group '{group.group_id}' has no images")

    remaining = dict(inventory.counts)
    assignments: dict[str, str] = {}
    trace: list[TraceStep] = []
    for group in groups:
        options = [bed for bed, count in remaining.items() if count > 0]
        if not options:
            raise InventoryExhausted(
                f"no bed types left for group '{group.group_id}' "
                f"({len(groups)} groups, {inventory.total()} beds)"
            )
        if len(options) == 1:
            choice = options[0]
        else:
            predictor.set_group(group.group_id)
            choice = canonical_label(
                predictor.predict(list(group.image_ids), list(group.image_uris), list(options))
            )
            if choice not in options:
                raise PredictorViolation(
                    f"group '{group.group_id}': predictor answered '{choice}', "
                    f"not one of {options}"
                )
        assignments[group.group_id] = choice
        trace.append(TraceStep(group_id=group.group_id, options=tuple(options), choice=choice))
        remaining[choice] -= 1
        if remaining[choice] == 0:
            del remaining[choice]
    return BedAssignment(assignments=assignments, trace=trace, leftover=dict(remaining))


def remote_predict(
    group_id: str,
    image_uris,
    options,
    endpoint: str,
    token: str | None = None,
    retries: int = 2,
    timeout: float = 30.0,
) -> str:
    """POST the prediction request and validate the answer against ``options``.

    Transport or protocol failures are retried ``retries`` times before
    raising :class:`RemoteFailure`.  An off-menu answer triggers exactly one
    re-ask with an explicit reminder before :class:`PredictorViolation`.
    """
    if not options:
        raise ValueError("options must be non-empty")
    canonical_options = [canonical_label(o) for o in options]

    def ask(prompt_context: str) -> str:
        payload = {
            "group_id": group_id,
            "image_uris": list(image_uris),
            "options": list(options),
            "prompt_context": prompt_context,
        }
        headers = {}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error = None
        for _ in range(retries + 1):
            try:
                response = requests.post(
                    endpoint, json=payload, headers=headers, timeout=timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if response.status_code != 200:
                last_error = f"status {response.status_code}"
                continue
            try:
                doc = response.json()
                return canonical_label(doc["bed_type"])
            except (ValueError, KeyError, TypeError) as exc:
                last_error = f"malformed response: {exc}"
                continue
        raise RemoteFailure(f"{endpoint}: {last_error} (after {retries + 1} attempts)")

    answer = ask("select exactly one option")
    if answer in canonical_options:
        return answer
    reminder = "select exactly one option; answer must be one of: " + "; ".join(options)
    answer = ask(reminder)
    if answer in canonical_options:
        return answer
    raise PredictorViolation(
        f"remote predictor answered '{answer}', not one of {canonical_options}"
    )
