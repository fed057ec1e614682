from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict

from mcpa.models import SolverSettings


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="MCPA_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Evaluation parallelism (residual/Jacobian chunks)
    threads: int = 1
    log_level: str = "INFO"

    # Levenberg-Marquardt
    max_iters: int = 10
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    cost_rel_tol: float = 1e-10
    gradient_tol: float = 1e-10

    # Wall times in reports and bench rows. False (or --no-timing) writes 0,
    # which makes repeated runs byte-identical
    record_timing: bool = True

    # Synthetic scene geometry (meters)
    linear_step: float = 2.0
    curve_radius: float = 100.0
    forward_spacing: float = 0.5
    omni_side: float = 0.5
    scene_extent: float = 500.0

    @property
    def effective_threads(self) -> int:
        return max(1, self.threads)

    def solver_settings(self, **overrides) -> SolverSettings:
        values = dict(
            max_iters=self.max_iters,
            lambda_init=self.lambda_init,
            lambda_up=self.lambda_up,
            lambda_down=self.lambda_down,
            cost_rel_tol=self.cost_rel_tol,
            gradient_tol=self.gradient_tol,
            threads=self.effective_threads,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SolverSettings(**values)


@lru_cache
def get_settings() -> Settings:
    return Settings()
