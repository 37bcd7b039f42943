"""Forced-choice blind test sessions.

Half originally-clean, half corrected patches are served unlabeled in a
shuffled order; a human marks each as original or corrected, and the
confusion statistics quantify how distinguishable the restorations are.
Truth labels live only in server-side session state and never appear in a
payload before the session completes.
"""

from __future__ import annotations

import json
import os
import tempfile
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .core import RngStream
from .errors import (
    ConfigError,
    ConflictError,
    IncompleteSessionError,
    InputError,
    NotFoundError,
)

TRUTH_VALUES = ("original_clean", "corrected")
ANSWER_VALUES = ("original_clean", "corrected")


@dataclass
class SessionItem:
    item_id: str
    path: str
    truth: str
    answer: str | None = None


@dataclass
class BlindSession:
    session_id: str
    patch_size: int
    seed: int
    items: list[SessionItem]
    created_at: str
    completed_at: str | None = None

    @property
    def n(self) -> int:
        return len(self.items)

    def answered_count(self) -> int:
        return sum(1 for item in self.items if item.answer is not None)

    def is_complete(self) -> bool:
        return self.answered_count() == self.n

    def find(self, item_id: str) -> SessionItem:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise NotFoundError(f"no item {item_id!r} in session {self.session_id}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def create_session(
    clean_pool: list[str | Path],
    corrected_pool: list[str | Path],
    n: int = 100,
    patch_size: int = 500,
    seed: int = 0,
    session_id: str | None = None,
) -> BlindSession:
    """Sample n/2 patches from each pool without replacement and shuffle.

    The same seed always produces the same item order.
    """
    if n % 2 != 0:
        raise ConfigError(f"blind test size must be even, got {n}")
    if n < 2:
        raise ConfigError(f"blind test needs at least 2 items, got {n}")
    half = n // 2
    if len(clean_pool) < half:
        raise InputError(f"clean pool has {len(clean_pool)} patches, need {half}")
    if len(corrected_pool) < half:
        raise InputError(f"corrected pool has {len(corrected_pool)} patches, need {half}")

    rng = RngStream(seed=seed, stream_id=13).generator()
    clean_sorted = sorted(str(p) for p in clean_pool)
    corrected_sorted = sorted(str(p) for p in corrected_pool)
    picks = [
        (clean_sorted[i], "original_clean")
        for i in rng.choice(len(clean_sorted), size=half, replace=False)
    ]
    picks += [
        (corrected_sorted[i], "corrected")
        for i in rng.choice(len(corrected_sorted), size=half, replace=False)
    ]
    order = rng.permutation(n)
    session_id = session_id or uuid.uuid4().hex[:12]
    items = [
        SessionItem(item_id=f"{session_id}-{pos:04d}", path=picks[j][0], truth=picks[j][1])
        for pos, j in enumerate(order)
    ]
    return BlindSession(
        session_id=session_id,
        patch_size=patch_size,
        seed=seed,
        items=items,
        created_at=_now(),
    )


def record_answer(session: BlindSession, item_id: str, answer: str) -> BlindSession:
    """Store one judgment; a second write to the same item is a conflict."""
    if answer not in ANSWER_VALUES:
        raise ConfigError(f"answer must be one of {ANSWER_VALUES}, got {answer!r}")
    item = session.find(item_id)
    if item.answer is not None:
        raise ConflictError(f"item {item_id!r} already answered")
    item.answer = answer
    if session.is_complete():
        session.completed_at = _now()
    return session


def session_report(session: BlindSession, allow_partial: bool = False) -> dict:
    """2x2 confusion plus the two headline rates.

    corrected_as_original: corrected patches that passed as original.
    clean_as_corrected: clean patches taken for corrected ones.
    """
    if not session.is_complete() and not allow_partial:
        raise IncompleteSessionError(
            f"session {session.session_id}: {session.answered_count()}/{session.n} answered"
        )
    matrix = {t: {a: 0 for a in ANSWER_VALUES} for t in TRUTH_VALUES}
    for item in session.items:
        if item.answer is None:
            continue
        matrix[item.truth][item.answer] += 1
    n_corrected = sum(matrix["corrected"].values())
    n_clean = sum(matrix["original_clean"].values())
    return {
        "session_id": session.session_id,
        "n": sum(sum(row.values()) for row in matrix.values()),
        "matrix": matrix,
        "corrected_as_original": (
            matrix["corrected"]["original_clean"] / n_corrected if n_corrected else 0.0
        ),
        "clean_as_corrected": (
            matrix["original_clean"]["corrected"] / n_clean if n_clean else 0.0
        ),
        "complete": session.is_complete(),
    }


def wire_items(session: BlindSession) -> dict:
    """The item listing sent to the UI: ids and answered flags, never truth."""
    return {
        "session_id": session.session_id,
        "patch_size": session.patch_size,
        "items": [
            {"item_id": item.item_id, "answered": item.answer is not None}
            for item in session.items
        ],
        "answered_count": session.answered_count(),
        "complete": session.is_complete(),
    }


# --------------------------------------------------------------------------- #
# Persistence
# --------------------------------------------------------------------------- #
def session_to_dict(session: BlindSession) -> dict:
    return {
        "session_id": session.session_id,
        "patch_size": session.patch_size,
        "seed": session.seed,
        "created_at": session.created_at,
        "completed_at": session.completed_at,
        "items": [
            {"item_id": i.item_id, "path": i.path, "truth": i.truth, "answer": i.answer}
            for i in session.items
        ],
    }


def session_from_dict(d: dict) -> BlindSession:
    return BlindSession(
        session_id=d["session_id"],
        patch_size=int(d["patch_size"]),
        seed=int(d["seed"]),
        created_at=d["created_at"],
        completed_at=d.get("completed_at"),
        items=[
            SessionItem(
                item_id=i["item_id"], path=i["path"], truth=i["truth"], answer=i.get("answer")
            )
            for i in d["items"]
        ],
    )


class SessionStore:
    """One JSON file per session, replaced atomically on every write."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.json"

    def save(self, session: BlindSession) -> None:
        payload = json.dumps(session_to_dict(session), indent=2) + "\n"
        fd, tmp = tempfile.mkstemp(dir=self.data_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, self._path(session.session_id))
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def load(self, session_id: str) -> BlindSession:
        path = self._path(session_id)
        if not path.exists():
            raise NotFoundError(f"no session {session_id!r}")
        return session_from_dict(json.loads(path.read_text()))

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.data_dir.glob("*.json"))
