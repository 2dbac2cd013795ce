from __future__ import annotations

import logging
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional


class ErrorHandler:
    """Aggregate soft failures from the solver, estimator and input layers.

    Entries are kept in memory (most recent ``max_recent``) and logged on the
    ``sddlogdet.errors`` logger. A file handler is attached only when a log
    file is configured, either here or through ``SDDLOGDET_ERROR_LOG``.
    """

    def __init__(self, log_file: Optional[str] = None, max_recent: int = 50) -> None:
        target = log_file or os.getenv("SDDLOGDET_ERROR_LOG")
        self.log_file: Optional[Path] = Path(target) if target else None
        self.max_recent = max_recent
        self._lock = threading.Lock()
        self._recent: list[Dict[str, Any]] = []
        self._total = 0
        self._logger = logging.getLogger("sddlogdet.errors")
        self._formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
        if self.log_file is not None:
            self._ensure_file_handler()

    def configure(self, log_file: Optional[str] = None) -> None:
        if not log_file:
            return
        with self._lock:
            self.log_file = Path(log_file)
            self._ensure_file_handler()

    def handle_solver_error(self, error: Exception, *, component: Optional[str] = None, **context: Any) -> None:
        if component:
            context["component"] = component
        self._record("solver", error, context)

    def handle_estimate_error(self, error: Exception, *, method: Optional[str] = None, **context: Any) -> None:
        if method:
            context["method"] = method
        self._record("estimate", error, context)

    def handle_input_error(self, error: Exception, *, source: Optional[str] = None) -> None:
        self._record("input", error, {"source": source} if source else None)

    def get_error_summary(self) -> Dict[str, Any]:
        with self._lock:
            recent = list(self._recent)
            total = self._total
        return {
            "total_errors": total,
            "recent_errors": recent,
        }

    def reset(self) -> None:
        with self._lock:
            self._recent.clear()
            self._total = 0

    def _record(self, category: str, error: Exception, context: Optional[Dict[str, Any]]) -> None:
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "category": category,
            "error_type": error.__class__.__name__,
            "message": str(error),
            "context": context or {},
        }
        with self._lock:
            self._recent.append(entry)
            self._total += 1
            if len(self._recent) > self.max_recent:
                del self._recent[: len(self._recent) - self.max_recent]
        context_str = ", ".join(f"{k}={v}" for k, v in (context or {}).items())
        self._logger.warning(
            "%s error: %s%s",
            category,
            error,
            f" ({context_str})" if context_str else "",
        )

    def _ensure_file_handler(self) -> None:
        assert self.log_file is not None
        self.log_file.parent.mkdir(parents=True, exist_ok=True)
        desired = str(self.log_file.resolve())
        for handler in list(self._logger.handlers):
            if isinstance(handler, logging.FileHandler):
                if str(Path(handler.baseFilename).resolve()) != desired:
                    self._logger.removeHandler(handler)
                    handler.close()
        if not any(
            isinstance(handler, logging.FileHandler)
            and str(Path(handler.baseFilename).resolve()) == desired
            for handler in self._logger.handlers
        ):
            file_handler = logging.FileHandler(self.log_file, encoding="utf-8")
            file_handler.setFormatter(self._formatter)
            self._logger.addHandler(file_handler)


default_error_handler = ErrorHandler()
error_handler_instance = default_error_handler

__all__ = [
    "ErrorHandler",
    "default_error_handler",
    "error_handler_instance",
]
