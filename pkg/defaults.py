"""Project defaults."""

from pydantic import ConfigDict

default_model_config: ConfigDict = ConfigDict(
    arbitrary_types_allowed=True,
    extra="forbid",
    frozen=True,
    use_enum_values=False,
    populate_by_name=True,
)

# optimisation, same as FedAvg
learning_rate: float = 0.01
local_epochs: int = 5
batch_size: int = 50
client_count: int = 10
client_fraction: float = 1.0
hidden_layers: tuple[int, ...] = (32, 32)

# stages
rounds: int = 60
warmup_rounds: int = 20
expert_rounds: int = 25
max_groups: int = 2

# distillation
temperature: float = 5.0
pkd_lambda: float = 1.0

# group detection threshold = multiplier * mean off-diagonal, clipped
theta_multiplier: float = 5.0
theta_floor: float = 0.05
theta_ceiling: float = 0.5

dirichlet_alpha: float = 0.5
classes_per_client: int = 1

# CSV float format, 6 significant digits
float_format: str = ".6g"
cost_targets: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)

# offset between synthetic train and test generator seeds
test_seed_offset: int = 1_000_003
