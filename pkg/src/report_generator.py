"""
Report Generator - Generación de Reportes Excel
=================================================
Libro Excel con una hoja por tabla del experimento (ablaciones, historial de
entrenamiento, métricas, CKA) y una hoja de resumen.
"""

import pandas as pd
from pathlib import Path
from datetime import datetime
from typing import Dict, Optional
import logging

try:
    from openpyxl.styles import Font, PatternFill, Alignment, Border, Side
    OPENPYXL_AVAILABLE = True
except ImportError:
    OPENPYXL_AVAILABLE = False

from .config import COLORS, REPORTS_DIR, get_current_date_str

logger = logging.getLogger(__name__)

# Excel limita los nombres de hoja a 31 caracteres
MAX_SHEET_NAME = 31


class ExcelReportStyles:
    """Estilos para reportes Excel"""

    if OPENPYXL_AVAILABLE:
        HEADER_FILL = PatternFill(start_color=COLORS['primary'][1:], end_color=COLORS['primary'][1:], fill_type="solid")
        HEADER_FONT = Font(bold=True, color="FFFFFF", size=11)
        FAILED_FILL = PatternFill(start_color=COLORS['danger'][1:], end_color=COLORS['danger'][1:], fill_type="solid")
        BORDER = Border(
            left=Side(style='thin'),
            right=Side(style='thin'),
            top=Side(style='thin'),
            bottom=Side(style='thin')
        )
        CENTER = Alignment(horizontal='center')


class ExperimentReportGenerator:
    """Generador de reportes Excel de experimentos"""

    def __init__(self, tables: Dict[str, pd.DataFrame], title: str = "Enhanced Interaction ViT",
                 summary: Optional[Dict[str, object]] = None):
        """
        Inicializa el generador de reportes

        Args:
            tables: Nombre de hoja -> DataFrame
            title: Título del reporte
            summary: Pares métrica/valor para la hoja de resumen
        """
        self.tables = {name: df.copy() for name, df in tables.items()}
        self.title = title
        self.summary = summary or {}

        if not OPENPYXL_AVAILABLE:
            logger.warning("openpyxl no disponible. Usando formato básico.")

    def generate(self, output_path: Optional[Path] = None) -> Path:
        """
        Escribe el libro completo

        Args:
            output_path: Ruta de salida (opcional)

        Returns:
            Path al archivo generado
        """
        if output_path is None:
            output_path = REPORTS_DIR / f"{get_current_date_str()}_experiment_report.xlsx"
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        with pd.ExcelWriter(output_path, engine='openpyxl') as writer:
            self._write_summary_sheet(writer)
            for name, df in self.tables.items():
                sheet = name[:MAX_SHEET_NAME]
                df.to_excel(writer, sheet_name=sheet, index=False)
                if OPENPYXL_AVAILABLE:
                    self._style_sheet(writer.sheets[sheet], df)

        logger.info(f"Reporte generado: {output_path}")
        return output_path

    def _write_summary_sheet(self, writer: pd.ExcelWriter):
        """Escribe hoja de resumen"""
        data = [
            ['RESUMEN DEL EXPERIMENTO', self.title],
            ['Fecha de Reporte', datetime.now().strftime('%Y-%m-%d %H:%M')],
            ['', ''],
        ]
        for key, value in self.summary.items():
            data.append([key, value])
        data.append(['', ''])
        data.append(['TABLAS', ''])
        for name, df in self.tables.items():
            data.append([name, f"{len(df)} filas"])

        df_summary = pd.DataFrame(data, columns=['Métrica', 'Valor'])
        df_summary.to_excel(writer, sheet_name='Resumen', index=False)
        if OPENPYXL_AVAILABLE:
            self._style_sheet(writer.sheets['Resumen'], df_summary)

    def _style_sheet(self, ws, df: pd.DataFrame):
        for cell in ws[1]:
            cell.fill = ExcelReportStyles.HEADER_FILL
            cell.font = ExcelReportStyles.HEADER_FONT
            cell.alignment = ExcelReportStyles.CENTER
            cell.border = ExcelReportStyles.BORDER

        # Filas de ablación fallidas en rojo
        if 'status' in df.columns:
            col = list(df.columns).index('status') + 1
            for row in range(2, len(df) + 2):
                value = ws.cell(row=row, column=col).value
                if isinstance(value, str) and value.startswith('failed'):
                    ws.cell(row=row, column=col).fill = ExcelReportStyles.FAILED_FILL

        for i, column in enumerate(df.columns, start=1):
            width = max([len(str(column))] + [len(str(v)) for v in df[column].head(50)])
            ws.column_dimensions[ws.cell(row=1, column=i).column_letter].width = min(60, width + 2)


def generate_experiment_report(tables: Dict[str, pd.DataFrame],
                               output_path: Optional[Path] = None,
                               summary: Optional[Dict[str, object]] = None) -> Path:
    """
    Función de conveniencia para generar el reporte Excel

    Args:
        tables: Nombre de hoja -> DataFrame
        output_path: Ruta de salida (opcional)
        summary: Pares métrica/valor

    Returns:
        Path al archivo generado
    """
    generator = ExperimentReportGenerator(tables, summary=summary)
    return generator.generate(output_path)
