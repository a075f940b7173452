"""Dataset access with caching for the CLI, the sweeps and the MCP tools."""

from __future__ import annotations

import logging
from collections import OrderedDict

import numpy as np

from .config import RuntimeConfig
from .data import SampleSet, SyntheticConfig, gen_synthetic, load_mnist_binary
from .errors import InputError

logger = logging.getLogger(__name__)

SYNTH = "synth"
MNIST = "mnist"

# synthetic splits kept alive at once; the least recently used one is dropped
SYNTHETIC_CACHE_SIZE = 4


class ExperimentWorkspace:
    """Owns the runtime config and lazily builds the datasets experiments use."""

    def __init__(
        self, config: RuntimeConfig | None = None, cache_size: int = SYNTHETIC_CACHE_SIZE
    ):
        if cache_size < 1:
            raise InputError(f"cache_size must be positive, got {cache_size}")
        self._config = config or RuntimeConfig()
        self._mnist: tuple[SampleSet, SampleSet] | None = None
        self._cache_size = cache_size
        self._synthetic: OrderedDict[
            tuple[SyntheticConfig, int], tuple[SampleSet, SampleSet]
        ] = OrderedDict()

    @property
    def config(self) -> RuntimeConfig:
        return self._config

    @property
    def batch_size(self) -> int:
        return self._config.eval_batch_size

    # -- Synthetic --------------------------------------------------------------

    def synthetic_split(self, cfg: SyntheticConfig, n_test: int) -> tuple[SampleSet, SampleSet]:
        """Draw ``cfg.n + n_test`` samples from one latent spline and cut off the test part.

        Samples are i.i.d., so the first ``cfg.n`` rows are the training set.
        """
        if n_test < 1:
            raise InputError(f"n_test must be positive, got {n_test}")
        key = (cfg, n_test)
        if key in self._synthetic:
            self._synthetic.move_to_end(key)
        else:
            full_cfg = SyntheticConfig(cfg.n + n_test, cfg.d, cfg.s, cfg.sigma_xi2, cfg.k, cfg.seed)
            full = gen_synthetic(full_cfg)
            self._synthetic[key] = (
                full.subset(np.arange(cfg.n), part="train", n=cfg.n),
                full.subset(np.arange(cfg.n, cfg.n + n_test), part="test", n=n_test),
            )
            if len(self._synthetic) > self._cache_size:
                dropped, _ = self._synthetic.popitem(last=False)
                logger.debug("dropping cached synthetic split %s", dropped)
        return self._synthetic[key]

    # -- MNIST ------------------------------------------------------------------

    def mnist_split(self) -> tuple[SampleSet, SampleSet]:
        """Binary 0-vs-1 MNIST train and test sets, loaded once."""
        if self._mnist is None:
            train = load_mnist_binary(*self._config.mnist_paths("train"))
            test = load_mnist_binary(*self._config.mnist_paths("test"))
            self._mnist = (train, test)
        return self._mnist

    def task_data(
        self,
        task: str,
        synthetic: SyntheticConfig | None = None,
        n_test: int = 1000,
    ) -> tuple[SampleSet, SampleSet]:
        """(train, test) for ``task``; the synthetic config defaults to the standard task."""
        if task == SYNTH:
            return self.synthetic_split(synthetic or SyntheticConfig(), n_test)
        if task == MNIST:
            return self.mnist_split()
        raise InputError(f"unknown task {task!r} (expected {SYNTH!r} or {MNIST!r})")
