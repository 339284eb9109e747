import copy
from collections.abc import Sequence

import matplotlib.pyplot as plt
import numpy as np
import torch
from matplotlib.axes import Axes
from matplotlib.figure import Figure

from .FaceAligner import FaceAligner
from .SketchMetrics import CMCCurve
from .utils import logger
from .utils import Types as T


class ResultRenderer:
    _DEFAULT_STYLE = {
        "grid": {"cell_size": 2.0, "title_size": 10, "label_size": 8},
        "cmc": {
            "figsize": (5, 4),
            "lw": 1.5,
            "colors": ["tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple"],
            "xlabel": "Rank",
            "ylabel": "Matching rate (%)",
            "grid": True,
        },
        "dpi": 100,
    }

    def __init__(self, style: dict | None = None):
        self._style = copy.deepcopy(self._DEFAULT_STYLE)

        # update style
        if isinstance(style, dict):
            for layer, opts in style.items():
                if layer in self._style and isinstance(self._style[layer], dict):
                    self._style[layer].update(opts)
                elif layer in self._style:
                    self._style[layer] = opts

    @staticmethod
    def to_display(image: T.Image | T.Tensor) -> np.ndarray:
        """
        HxWx3 uint8 view of a [-1,1] CxHxW tensor or a [0,255] array.
        """
        if isinstance(image, torch.Tensor):
            return FaceAligner.tensor_to_uint8(image)
        image = np.asarray(image)
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        return np.clip(image, 0, 255).astype(np.uint8)

    def _save(self, fig: Figure, filename: str | None) -> None:
        if filename is not None:
            fig.savefig(filename, dpi=self._style["dpi"], bbox_inches="tight")
            logger.info(f"Saved to {filename}")

    def draw_grid_return_fig(
        self,
        rows: Sequence[Sequence[T.Image | T.Tensor | None]],
        column_titles: Sequence[str],
        row_labels: Sequence[str] | None = None,
        filename: str | None = None,
    ) -> tuple[Figure, np.ndarray]:
        """
        One row per sample, one column per title. Empty cells (None) stay blank.
        """
        n_rows, n_cols = len(rows), len(column_titles)
        if n_rows == 0:
            raise ValueError("Nothing to draw: grid has no rows")
        for row in rows:
            if len(row) != n_cols:
                raise ValueError(f"Grid row has {len(row)} cells, expected {n_cols}")

        size = self._style["grid"]["cell_size"]
        fig, axes = plt.subplots(
            n_rows, n_cols, figsize=(size * n_cols, size * n_rows), squeeze=False
        )
        for r, row in enumerate(rows):
            for c, cell in enumerate(row):
                ax: Axes = axes[r, c]
                ax.axis("off")
                if cell is not None:
                    ax.imshow(self.to_display(cell))
                if r == 0:
                    ax.set_title(column_titles[c], fontsize=self._style["grid"]["title_size"])
            if row_labels is not None:
                axes[r, 0].text(
                    -0.05,
                    0.5,
                    row_labels[r],
                    transform=axes[r, 0].transAxes,
                    ha="right",
                    va="center",
                    fontsize=self._style["grid"]["label_size"],
                )
        fig.tight_layout()
        self._save(fig, filename)
        return fig, axes

    def draw_comparison(
        self,
        inputs: Sequence[T.Image | T.Tensor],
        outputs: Sequence[T.Image | T.Tensor],
        targets: Sequence[T.Image | T.Tensor | None] | None = None,
        row_labels: Sequence[str] | None = None,
        filename: str | None = None,
    ) -> None:
        """
        input | output | ground truth. The ground-truth column is dropped when no
        row has a target.
        """
        if len(inputs) != len(outputs):
            raise ValueError(f"{len(inputs)} inputs but {len(outputs)} outputs")
        has_target = targets is not None and any(t is not None for t in targets)
        titles = ["input", "output"] + (["ground truth"] if has_target else [])
        rows = [
            [x, y] + ([targets[i]] if has_target else []) for i, (x, y) in enumerate(zip(inputs, outputs))
        ]
        fig, _ = self.draw_grid_return_fig(rows, titles, row_labels, filename)
        plt.close(fig)

    def draw_ablation(
        self,
        inputs: Sequence[T.Image | T.Tensor],
        targets: Sequence[T.Image | T.Tensor],
        outputs_by_config: dict[str, Sequence[T.Image | T.Tensor]],
        filename: str | None = None,
    ) -> None:
        """
        input | ground truth | one column per training configuration.
        """
        titles = ["input", "ground truth", *outputs_by_config]
        rows = [
            [inputs[i], targets[i], *(outs[i] for outs in outputs_by_config.values())]
            for i in range(len(inputs))
        ]
        fig, _ = self.draw_grid_return_fig(rows, titles, filename=filename)
        plt.close(fig)

    def draw_cmc_return_fig(
        self,
        curves: dict[str, CMCCurve],
        title: str | None = None,
        filename: str | None = None,
    ) -> tuple[Figure, Axes]:
        """
        Matching rate in percent against rank, one line per curve.
        """
        style = self._style["cmc"]
        fig, ax = plt.subplots(figsize=style["figsize"])
        for i, (label, curve) in enumerate(curves.items()):
            ranks = np.arange(1, len(curve) + 1)
            ax.plot(
                ranks,
                100.0 * curve.rank_rates,
                label=label,
                lw=style["lw"],
                color=style["colors"][i % len(style["colors"])],
            )
        ax.set_xlabel(style["xlabel"])
        ax.set_ylabel(style["ylabel"])
        ax.set_ylim(0, 101)
        if style["grid"]:
            ax.grid(True, alpha=0.3)
        if title:
            ax.set_title(title)
        if curves:
            ax.legend(loc="lower right")
        self._save(fig, filename)
        return fig, ax

    def draw_cmc(
        self, curves: dict[str, CMCCurve], title: str | None = None, filename: str | None = None
    ) -> None:
        fig, _ = self.draw_cmc_return_fig(curves, title=title, filename=filename)
        plt.close(fig)
