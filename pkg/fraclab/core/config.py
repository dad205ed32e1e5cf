from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Runtime
    threads: int = 1
    log_level: str = "INFO"
    logs_dir: str = "logs"
    output_dir: str = "results"
    float_digits: int = 12

    # Newton solver
    residual_tol: float = 1e-9
    newton_max_iter: int = 60
    armijo_c: float = 1e-4
    armijo_min_step: float = 1.0 / 1024
    lambda_margin: float = 1e-6
    dedup_tol: float = 1e-6
    homotopy_start_levels: int = 4

    # Line problem
    line_half_width: float = 50.0
    line_lambda: float = 1.0

    # Picone audit
    picone_ratio_cap: float = 1e6

    # Extension and nodal domains
    nodal_threshold: float = 1e-8
    t_min: float = 1e-4
    t_ratio: float = 0.7
    t_levels: int = 40
    x_window: float = 8.0
    boundary_window: float = 0.05
    boundary_skip_cells: int = 3
    fit_residual_max: float = 5e-2
    hopf_threshold: float = 1e-6

    # Continuation
    p_cap: float = 5.0
    dp_min: float = 1e-4
    dp_max: float = 0.2
    dp_initial: float = 0.1
    corrector_max_iter: int = 8
    bifurcation_threshold: float = 1e-4

    class Config:
        env_file = ".env"
        env_prefix = "FRACLAB_"


settings = Settings()
