# qr_visualizer.py
"""
Optional PNG figures for lab reports: Julia rasters, conjugacy step decay
and mean-radius profiles.
"""

from pathlib import Path
from typing import Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns
from matplotlib.colors import ListedColormap
from matplotlib.patches import Patch

from config import QR_CONFIG
from dynamics import CONVERGED, ESCAPED, UNDECIDED, JuliaRaster
from infspace import MeanRadiusProfile
from qr_errors import EmitError
from schroder import ConjugacyReport


class QRVisualizer:
    """
    Plot lab results with one shared style.
    """

    def __init__(self):
        self.settings = QR_CONFIG['visualization']
        colors = QR_CONFIG['raster']['colors']
        self.class_colors = {
            ESCAPED: np.asarray(colors['escaped']) / 255.0,
            CONVERGED: np.asarray(colors['converged']) / 255.0,
            UNDECIDED: np.asarray(colors['undecided']) / 255.0,
        }

        try:
            plt.style.use(self.settings['style'])
        except OSError:
            plt.style.use('default')
        sns.set_palette("husl")

    def plot_julia(self, raster: JuliaRaster, title: Optional[str] = None) -> plt.Figure:
        """
        Show the per-pixel classes of a raster.

        Args:
            raster: Output of julia_render
            title: Figure title

        Returns:
            Matplotlib figure
        """
        fig, ax = plt.subplots(figsize=self.settings['figure_size'])
        cmap = ListedColormap([self.class_colors[code] for code in (ESCAPED, CONVERGED, UNDECIDED)])
        (x0, x1), (y0, y1) = raster.window
        ax.imshow(raster.classes, cmap=cmap, vmin=0, vmax=2, extent=(x0, x1, y0, y1),
                  interpolation='nearest')
        ax.set_xlabel('Re', fontsize=12, fontweight='bold')
        ax.set_ylabel('Im', fontsize=12, fontweight='bold')
        counts = raster.class_counts()
        handles = [Patch(color=self.class_colors[code], label=f"{name} ({counts[name]})")
                   for name, code in (('escaped', ESCAPED), ('converged', CONVERGED), ('undecided', UNDECIDED))]
        ax.legend(handles=handles, loc='upper right', framealpha=0.9)
        ax.set_title(title or f"Julia raster after {raster.iterations} steps", fontsize=14, fontweight='bold')
        plt.tight_layout()
        return fig

    def plot_conjugacy_decay(self, report: ConjugacyReport) -> plt.Figure:
        fig, ax = plt.subplots(figsize=self.settings['figure_size'])
        frame = report.to_frame()
        steps = frame['sup_step'].where(frame['sup_step'] > 0)
        ax.semilogy(frame['k'], steps, 'b-o', linewidth=2.5, alpha=0.8, label='sup |iota_{k+1} - iota_k|')
        if len(frame) > 1 and report.decay_ratio > 0:
            start = frame['sup_step'].iloc[0]
            ax.semilogy(frame['k'], start * report.decay_ratio ** frame['k'], 'r--', alpha=0.6,
                        label=f"ratio {report.decay_ratio:.3f}")
        ax.set_xlabel('k', fontsize=12, fontweight='bold')
        ax.set_ylabel('Sup step', fontsize=12, fontweight='bold')
        ax.legend(loc='upper right', framealpha=0.9)
        ax.grid(True, alpha=0.3)
        ax.set_title('Conjugacy Iteration', fontsize=14, fontweight='bold')
        plt.tight_layout()
        return fig

    def plot_mean_radius_profile(self, profile: MeanRadiusProfile) -> plt.Figure:
        fig, ax = plt.subplots(figsize=self.settings['figure_size'])
        ax.loglog(profile.t, profile.r, 'g-o', linewidth=2, alpha=0.8, label='r_f(t)')
        if np.isfinite(profile.fitted_d):
            anchor = profile.r[0] / profile.t[0] ** profile.fitted_d
            ax.loglog(profile.t, anchor * profile.t ** profile.fitted_d, 'm--', alpha=0.7,
                      label=f"slope d = {profile.fitted_d:.4f}")
        ax.set_xlabel('t', fontsize=12, fontweight='bold')
        ax.set_ylabel('Mean radius', fontsize=12, fontweight='bold')
        ax.legend(loc='upper left', framealpha=0.9)
        ax.grid(True, alpha=0.3)
        ax.set_title('Mean-Radius Profile', fontsize=14, fontweight='bold')
        plt.tight_layout()
        return fig

    def save(self, fig: plt.Figure, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, dpi=self.settings['dpi'], bbox_inches='tight')
        except OSError as exc:
            raise EmitError(f"could not save plot {path}: {exc}") from exc
        finally:
            plt.close(fig)
        return path
