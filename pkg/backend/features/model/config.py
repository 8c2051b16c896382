"""
Model and Run Configuration
Typed, validated configuration for the GCN model and for one training run
"""

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from ..comm.grid import DeviceGrid, parse_grid


class ModelConfig(BaseModel):
    """GCN architecture: input projection, L layers, output head"""

    n_layers: int = Field(2, ge=1, description="Number of GCN layers (L)")
    d_in: int = Field(..., ge=1, description="Input feature dimension")
    d_hidden: int = Field(16, ge=1, description="Hidden dimension (d_h)")
    d_out: int = Field(..., ge=1, description="Number of classes")
    dropout: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout rate")
    use_rmsnorm: bool = Field(True, description="Apply RMSNorm after each layer's GEMM")
    use_dropout: bool = Field(True, description="Apply dropout after ReLU")
    use_residual: bool = Field(True, description="Add the layer input back to its output")
    loss: Literal["single_label"] = Field("single_label", description="Loss mode")


class SyntheticParams(BaseModel):
    """Synthetic dataset generator parameters"""

    n: int = Field(500, ge=1, description="Vertex count")
    avg_degree: float = Field(8.0, ge=0.0, description="Expected vertex degree")
    d_in: int = Field(128, ge=1, description="Feature dimension")
    n_classes: int = Field(32, ge=2, description="Number of classes")
    feature_signal: float = Field(1.0, ge=0.0, description="Class-centroid scale added to features")


class RunConfig(BaseModel):
    """
    One training or verification run

    Field names double as keys of the `key = value` config file.
    """

    grid: str = Field("1x1x1x1", description="Grid as GdxGxxGyxGz")
    batch_size: int = Field(64, ge=2, description="Vertices sampled per step and DP group (B)")
    epochs: int = Field(1, ge=1, description="Training epochs")
    seed: int = Field(0, ge=0, description="Run seed")
    precision: Literal["fp32", "bf16comm"] = Field("fp32", description="PMM all-reduce payload precision")
    prefetch: bool = Field(False, description="Build step t+1's batch while step t computes")
    overlap: bool = Field(False, description="Issue orthogonal backward all-reduces together")
    layers: int = Field(2, ge=1, description="Number of GCN layers")
    hidden: int = Field(16, ge=1, description="Hidden dimension")
    dropout: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout rate")
    use_rmsnorm: bool = Field(True, description="Enable RMSNorm")
    use_dropout: bool = Field(True, description="Enable dropout")
    use_residual: bool = Field(True, description="Enable residual connections")
    lr: float = Field(1e-3, gt=0.0, description="Learning rate")
    optimizer: Literal["adam", "sgd"] = Field("adam", description="Optimizer")
    eval_every: int = Field(1, ge=1, description="Full-graph evaluation period in epochs")
    dtype: Literal["float32", "float64"] = Field("float32", description="Compute precision")
    data_dir: Optional[Path] = Field(None, description="Directory with graph.txt, features.sgnf, labels.sgnl, split.sgns")
    synthetic: SyntheticParams = Field(default_factory=SyntheticParams, description="Generator used when data_dir is unset")
    out: Optional[Path] = Field(None, description="Metrics CSV path")
    threads: Optional[int] = Field(None, ge=1, description="Compute slot cap (GRIDGNN_THREADS)")
    collective_timeout: float = Field(120.0, gt=0.0, description="Rendezvous timeout in seconds")

    @field_validator("grid")
    @classmethod
    def _grid_format(cls, value: str) -> str:
        parse_grid(value)
        return value.strip()

    @field_validator("data_dir")
    @classmethod
    def _data_dir_exists(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not Path(value).is_dir():
            raise ValueError(f"data directory {value} does not exist")
        return value

    @model_validator(mode="after")
    def _batch_fits_synthetic(self) -> "RunConfig":
        if self.data_dir is None and self.batch_size > self.synthetic.n:
            raise ValueError(f"batch_size {self.batch_size} exceeds synthetic vertex count {self.synthetic.n}")
        return self

    @property
    def device_grid(self) -> DeviceGrid:
        return parse_grid(self.grid)

    def to_model_config(self, d_in: int, d_out: int) -> ModelConfig:
        return ModelConfig(
            n_layers=self.layers,
            d_in=d_in,
            d_hidden=self.hidden,
            d_out=d_out,
            dropout=self.dropout,
            use_rmsnorm=self.use_rmsnorm,
            use_dropout=self.use_dropout,
            use_residual=self.use_residual,
        )
