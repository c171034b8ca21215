"""
Main class.
"""

import faulthandler
import pdb
import sys
import traceback

import pyfiglet
from beartype.typing import List, Optional, Union

from .utils.env import HETSENSE_DEBUGGER
from .utils.experiments import load_experiment_config, run_experiment
from .utils.flags import is_debug, is_silent
from .utils.logger import logger, md_printer, red, set_help_md_as_docstring
from .utils.typechecker import optional_typecheck

# flag of the command line -> dotted configuration key
OVERRIDE_KEYS = {
    "d": "model.d",
    "r1": "model.r1",
    "r2": "model.r2",
    "m": "optimizer.batch_size",
    "eta": "optimizer.eta",
    "alpha": "optimizer.alpha",
    "steps": "optimizer.steps",
    "het": "dist.level",
    "seed": "seeds",
    "mode": "mode",
    "measurement": "optimizer.measurement_kind",
    "out": "output_dir",
    "full": "full",
    "plot": "plot",
}

# experiments where a flag lands on another key than OVERRIDE_KEYS says
ROUTED_KEYS = {
    "verify-controller": {
        "eta": "verify.eta",
        "steps": "verify.controller_steps",
    },
}


@optional_typecheck
def build_overrides(experiment: Optional[str] = None, **flags) -> dict:
    "nested override dict from the non None command line flags"
    keys = {**OVERRIDE_KEYS, **ROUTED_KEYS.get(experiment, {})}
    out = {}
    for name, value in flags.items():
        if value is None:
            continue
        key = keys[name]
        if name == "seed":
            value = [int(s) for s in value] if isinstance(value, (list, tuple)) else [int(value)]
        elif name in ("eta", "alpha", "het"):
            value = float(value)
        elif name in ("out", "mode", "measurement"):
            value = str(value)
        if "." in key:
            section, sub = key.split(".", 1)
            out.setdefault(section, {})[sub] = value
        else:
            out[key] = value
    return out


@optional_typecheck
@set_help_md_as_docstring
class hetsense:
    """
    This docstring is dynamically updated with the content of hetsense/docs/help.md
    """

    VERSION: str = "0.1.0"
    md_printer = md_printer

    def __init__(self) -> None:
        if is_debug or HETSENSE_DEBUGGER:
            debug_exceptions()
        if not is_silent:
            red(pyfiglet.figlet_format("hetsense"))

    @optional_typecheck
    def _launch(
        self,
        experiment: str,
        config: Optional[str],
        overrides: dict,
    ) -> int:
        cfg = load_experiment_config(config, overrides, experiment=experiment)
        logger.info(f"Configuration digest {cfg.digest()}")
        return run_experiment(cfg)

    def run(
        self,
        config: Optional[str] = None,
        experiment: str = "single-run",
        d: Optional[int] = None,
        r1: Optional[int] = None,
        r2: Optional[int] = None,
        m: Optional[int] = None,
        eta: Optional[Union[int, float]] = None,
        alpha: Optional[Union[int, float]] = None,
        steps: Optional[int] = None,
        het: Optional[Union[int, float]] = None,
        seed: Optional[Union[int, List[int]]] = None,
        mode: Optional[str] = None,
        measurement: Optional[str] = None,
        out: Optional[str] = None,
        full: Optional[bool] = None,
        plot: Optional[bool] = None,
    ) -> int:
        "train once per seed (or run a compare-* experiment), see --help"
        flags = dict(locals())
        for k in ["self", "config", "experiment"]:
            flags.pop(k)
        return self._launch(experiment, config, build_overrides(experiment, **flags))

    def sweep(
        self,
        config: Optional[str] = None,
        experiment: str = "sweep-heterogeneity",
        d: Optional[int] = None,
        r1: Optional[int] = None,
        r2: Optional[int] = None,
        m: Optional[int] = None,
        eta: Optional[Union[int, float]] = None,
        alpha: Optional[Union[int, float]] = None,
        steps: Optional[int] = None,
        het: Optional[Union[int, float]] = None,
        seed: Optional[Union[int, List[int]]] = None,
        mode: Optional[str] = None,
        measurement: Optional[str] = None,
        out: Optional[str] = None,
        full: Optional[bool] = None,
        plot: Optional[bool] = None,
    ) -> int:
        "sweep the heterogeneity level or the step size, see --help"
        flags = dict(locals())
        for k in ["self", "config", "experiment"]:
            flags.pop(k)
        return self._launch(experiment, config, build_overrides(experiment, **flags))

    def verify(
        self,
        config: Optional[str] = None,
        d: Optional[int] = None,
        r1: Optional[int] = None,
        r2: Optional[int] = None,
        m: Optional[int] = None,
        eta: Optional[Union[int, float]] = None,
        alpha: Optional[Union[int, float]] = None,
        steps: Optional[int] = None,
        het: Optional[Union[int, float]] = None,
        seed: Optional[Union[int, List[int]]] = None,
        mode: Optional[str] = None,
        measurement: Optional[str] = None,
        out: Optional[str] = None,
        full: Optional[bool] = None,
        plot: Optional[bool] = None,
    ) -> int:
        "RIP error bounds, subspace angles, assumption constants and dynamics identities"
        flags = dict(locals())
        for k in ["self", "config"]:
            flags.pop(k)
        return self._launch("verify-rip", config, build_overrides("verify-rip", **flags))

    def controller(
        self,
        config: Optional[str] = None,
        d: Optional[int] = None,
        r1: Optional[int] = None,
        r2: Optional[int] = None,
        m: Optional[int] = None,
        eta: Optional[Union[int, float]] = None,
        alpha: Optional[Union[int, float]] = None,
        steps: Optional[int] = None,
        het: Optional[Union[int, float]] = None,
        seed: Optional[Union[int, List[int]]] = None,
        mode: Optional[str] = None,
        measurement: Optional[str] = None,
        out: Optional[str] = None,
        full: Optional[bool] = None,
        plot: Optional[bool] = None,
    ) -> int:
        """supermartingale check, controller absorption and sequence envelopes.
        --eta and --steps set the step size and length of the controller run"""
        flags = dict(locals())
        for k in ["self", "config"]:
            flags.pop(k)
        return self._launch(
            "verify-controller", config, build_overrides("verify-controller", **flags)
        )


def debug_exceptions() -> None:
    "open a debugger if --debug is set"

    def handle_exception(exc_type, exc_value, exc_traceback):
        if not issubclass(exc_type, KeyboardInterrupt):

            @optional_typecheck
            def p(message: str) -> None:
                "print error, in red if possible"
                try:
                    red(message)
                except Exception:
                    print(message)

            p(
                "\n--debug was used so opening debug console at the "
                "appropriate frame. Press 'c' to continue to the frame "
                "of this print."
            )
            [p(line) for line in traceback.format_tb(exc_traceback)]
            p(str(exc_type) + " : " + str(exc_value))
            if hasattr(exc_value, "__cause__") and hasattr(
                exc_value.__cause__, "__traceback__"
            ):
                p("Detected a cause to the exception, opening the cause first")
                pdb.post_mortem(exc_value.__cause__.__traceback__)
                p("Out of the __cause__, now debugging the higher traceback:")
            pdb.post_mortem(exc_traceback)
            sys.exit(1)

    sys.excepthook = handle_exception
    faulthandler.enable()
