from typing import Dict, Any, Optional
from pathlib import Path
import copy
import logging
import os

import yaml

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SDDLOGDET_CONFIG"


def _merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


class EnvironmentConfig:
    """Single unified runtime configuration.

    Defaults live in `_load_config`. A YAML file named by ``SDDLOGDET_CONFIG``
    (or passed explicitly) is merged on top, key by key.
    """

    def __init__(self, overlay_path: Optional[str] = None):
        self.config = self._load_config()
        path = overlay_path or os.getenv(CONFIG_ENV_VAR)
        if path:
            self.load_overlay(path)

    def _load_config(self) -> Dict[str, Any]:
        """Return the default configuration."""
        return {
            "log_level": "INFO",
            "log_file": None,
            "estimation": {
                "eps": 0.1,
                "eta": 0.1,
                "seed": 42,
                "threads": 1,
                "sample_block": 64,
                # theorem plans above p * l * (grounded dimension) switch to pilot plans
                "compute_cap": 1.0e9,
                "pilot_plans": True,
                "pilot_samples": 64,
                "pilot_inflation": 1.5,
                # pilot plans above this degrade to bounds
                "pilot_cap": 4.0e9,
                "kappa_inflation": 2.0,
                "strict_nu": False,
            },
            "solver": {
                "dense_threshold": 100,
                "condition_iterations": 50,
                "condition_safety": 2.0,
                "probe_tol": 1e-8,
                "pcg_iteration_factor": 10.0,
                "pcg_iteration_base": 100,
            },
            "tree": {
                "max_swaps": 32,
                "random_roots": 2,
                "jitter": 0.5,
                "score_iterations": 30,
            },
            "sketch": {
                "constant": 24.0,
                "resistance_eps": 0.5,
            },
            "sparsify": {
                "constant": 9.0,
                "max_retries": 5,
                "fast_eps": 1.0 / 16.0,
            },
            "chain": {
                "target_kappa": 16.0,
                "sample_fraction": 0.125,
                "length_slack": 10,
                "certify_dense_max": 600,
                "direct_inner_max": 4000,
                "probe_margin": 0.05,
            },
            "verify": {
                "dense_cap": 2000,
            },
            "sparse": {
                "laplacian_rtol": 1e-9,
            },
        }

    def load_overlay(self, path: str) -> None:
        target = Path(path)
        with target.open("r", encoding="utf-8") as handle:
            overlay = yaml.safe_load(handle) or {}
        if not isinstance(overlay, dict):
            raise ValueError(f"Config overlay {target} must be a mapping")
        _merge(self.config, overlay)
        logger.info("Loaded config overlay from %s", target)

    def get(self, key: str, default: Any = None) -> Any:
        keys = key.split(".")
        value: Any = self.config
        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def override(self, key: str, value: Any) -> None:
        keys = key.split(".")
        target = self.config
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value

    def snapshot(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)


# Global configuration instance
config = EnvironmentConfig()
