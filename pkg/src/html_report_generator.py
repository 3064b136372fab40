"""
HTML Report Generator - Reportes HTML con Gráficos
==================================================
Resumen HTML de un experimento: tarjetas de métricas, tablas y gráficos de
ablación (métrica vs n_lpu, métrica vs L, barras de aislamiento) embebidos
como PNG base64.
"""

import pandas as pd
import numpy as np
from pathlib import Path
from datetime import datetime
from typing import Dict, Optional
import logging
import base64
from io import BytesIO

from jinja2 import Environment, BaseLoader, select_autoescape

try:
    import matplotlib
    matplotlib.use('Agg')  # Backend sin GUI
    import matplotlib.pyplot as plt
    MATPLOTLIB_AVAILABLE = True
except ImportError:
    MATPLOTLIB_AVAILABLE = False

from .config import COLORS, REPORTS_DIR, get_current_date_str

logger = logging.getLogger(__name__)

PLOT_METRICS = ['mAP50', 'mAP75', 'AR']

TEMPLATE = """<!DOCTYPE html>
<html lang="es">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{{ title }}</title>
    <style>
        * { margin: 0; padding: 0; box-sizing: border-box; }
        body { font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif; background: {{ colors.light }}; padding: 20px; }
        .container { max-width: 1200px; margin: 0 auto; background: white; border-radius: 12px; overflow: hidden; }
        header { background: {{ colors.primary }}; color: white; padding: 32px; text-align: center; }
        .subtitle { opacity: 0.85; margin-top: 8px; }
        .cards-section { display: flex; flex-wrap: wrap; gap: 16px; padding: 24px; }
        .card { flex: 1 1 160px; border-radius: 10px; padding: 16px; color: white; background: {{ colors.success }}; }
        .card-value { font-size: 1.8em; font-weight: bold; }
        section { padding: 0 24px 24px; }
        h2 { color: {{ colors.dark }}; margin: 16px 0; }
        table { width: 100%; border-collapse: collapse; font-size: 0.9em; }
        th { background: {{ colors.primary }}; color: white; padding: 8px; }
        td { padding: 6px 8px; border-bottom: 1px solid #ddd; text-align: center; }
        td.failed { color: {{ colors.danger }}; font-weight: bold; }
        .chart img { max-width: 100%; }
    </style>
</head>
<body>
    <div class="container">
        <header>
            <h1>{{ title }}</h1>
            <p class="subtitle">Generado: {{ generated }}</p>
        </header>
        {% if cards %}
        <section class="cards-section">
            {% for label, value in cards.items() %}
            <div class="card">
                <div class="card-value">{{ value }}</div>
                <div class="card-label">{{ label }}</div>
            </div>
            {% endfor %}
        </section>
        {% endif %}
        {% for name, table in tables.items() %}
        <section>
            <h2>{{ name }}</h2>
            {% if name in charts %}
            <div class="chart"><img src="data:image/png;base64,{{ charts[name] }}" alt="{{ name }}"></div>
            {% endif %}
            <table>
                <tr>{% for col in table.columns %}<th>{{ col }}</th>{% endfor %}</tr>
                {% for row in table.rows %}
                <tr>{% for cell in row %}<td{% if cell is string and cell.startswith('failed') %} class="failed"{% endif %}>{{ cell }}</td>{% endfor %}</tr>
                {% endfor %}
            </table>
        </section>
        {% endfor %}
    </div>
</body>
</html>
"""


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return "-" if np.isnan(value) else f"{value:.4f}"
    return value


class HTMLReportGenerator:
    """Generador de reportes HTML con gráficos"""

    def __init__(self, tables: Dict[str, pd.DataFrame], title: str = "Enhanced Interaction ViT",
                 cards: Optional[Dict[str, object]] = None):
        """
        Inicializa el generador

        Args:
            tables: Nombre de sección -> DataFrame
            title: Título del reporte
            cards: Tarjetas de resumen (etiqueta -> valor)
        """
        self.tables = {name: df.copy() for name, df in tables.items()}
        self.title = title
        self.cards = cards or {}
        self.charts: Dict[str, str] = {}
        self.env = Environment(loader=BaseLoader(), autoescape=select_autoescape(default=True))

    def generate(self, output_path: Optional[Path] = None) -> Path:
        """
        Genera el reporte HTML

        Args:
            output_path: Ruta de salida

        Returns:
            Path al archivo generado
        """
        if output_path is None:
            output_path = REPORTS_DIR / f"{get_current_date_str()}_experiment_report.html"
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        if MATPLOTLIB_AVAILABLE:
            self._generate_charts()
        else:
            logger.warning("matplotlib no disponible. Reporte HTML sin gráficos.")

        with open(output_path, 'w', encoding='utf-8') as f:
            f.write(self.render())

        logger.info(f"Reporte HTML generado: {output_path}")
        return output_path

    def render(self) -> str:
        tables = {
            name: {
                'columns': list(df.columns),
                'rows': [[_format_cell(v) for v in row] for row in df.itertuples(index=False)],
            }
            for name, df in self.tables.items()
        }
        return self.env.from_string(TEMPLATE).render(
            title=self.title,
            generated=datetime.now().strftime('%Y-%m-%d %H:%M'),
            colors=COLORS,
            cards=self.cards,
            tables=tables,
            charts=self.charts,
        )

    def _generate_charts(self):
        """Un gráfico por tabla de ablación reconocible"""
        plt.style.use('ggplot')
        for name, df in self.tables.items():
            if not set(PLOT_METRICS) <= set(df.columns):
                continue
            if 'variant' in df.columns:
                self.charts[name] = self._create_grouped_bar(df, name)
            elif 'value' in df.columns:
                self.charts[name] = self._create_line_chart(df, name)

    def _create_line_chart(self, df: pd.DataFrame, title: str) -> str:
        """Métricas vs valor barrido"""
        fig, ax = plt.subplots(figsize=(8, 5))
        x = df['value']
        for metric in PLOT_METRICS:
            ax.plot(range(len(df)), df[metric].values, marker='o', label=metric)
        ax.set_xticks(range(len(df)))
        ax.set_xticklabels(list(x))
        ax.set_xlabel('valor')
        ax.set_ylim(0, 1)
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.legend()
        plt.tight_layout()
        return self._fig_to_base64(fig)

    def _create_grouped_bar(self, df: pd.DataFrame, title: str) -> str:
        """Barras agrupadas por variante"""
        fig, ax = plt.subplots(figsize=(10, 5))
        width = 0.8 / len(PLOT_METRICS)
        positions = np.arange(len(df))
        for i, metric in enumerate(PLOT_METRICS):
            ax.bar(positions + i * width, df[metric].fillna(0).values, width, label=metric)
        ax.set_xticks(positions + width * (len(PLOT_METRICS) - 1) / 2)
        ax.set_xticklabels(df['name'] if 'name' in df.columns else df['variant'], rotation=15)
        ax.set_ylim(0, 1)
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.legend()
        plt.tight_layout()
        return self._fig_to_base64(fig)

    def _fig_to_base64(self, fig) -> str:
        """Convierte figura matplotlib a string base64"""
        buffer = BytesIO()
        fig.savefig(buffer, format='png', dpi=100, bbox_inches='tight')
        plt.close(fig)
        buffer.seek(0)
        return base64.b64encode(buffer.read()).decode()


def generate_experiment_html(tables: Dict[str, pd.DataFrame],
                             output_path: Optional[Path] = None,
                             cards: Optional[Dict[str, object]] = None) -> Path:
    """
    Función de conveniencia para generar el reporte HTML

    Args:
        tables: Nombre de sección -> DataFrame
        output_path: Ruta de salida
        cards: Tarjetas de resumen

    Returns:
        Path al archivo generado
    """
    generator = HTMLReportGenerator(tables, cards=cards)
    return generator.generate(output_path)
