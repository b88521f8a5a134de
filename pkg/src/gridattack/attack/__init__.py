"""False-data attack design against DCOPF and SCED operators."""
from .adblp import (AttackResult, AttackSpec, AttackSpecError, BigMError, build_adblp, solve_attack,
                    target_row)
from .loop import LoopReport, run_attack_loop
from .study import StudyTable, sweep_study

__all__ = ["AttackResult", "AttackSpec", "AttackSpecError", "BigMError", "build_adblp",
           "solve_attack", "target_row", "LoopReport", "run_attack_loop", "StudyTable", "sweep_study"]
