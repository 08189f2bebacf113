from .train import train_command
from .rate_study import rate_study_command
from .perturb import perturb_command
from .rademacher import rademacher_command
from .verify import verify_command
from .build import build_command

commands = [
    train_command,
    rate_study_command,
    perturb_command,
    rademacher_command,
    verify_command,
    build_command,
]
