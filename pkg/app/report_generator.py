"""
Generador de reportes de evaluación en PDF y Excel.

Resume una corrida de evaluación (precisión final, línea base aleatoria,
curva de aprendizaje, distribución de acciones y rollouts) para revisión y
archivo del experimento.
"""

from pathlib import Path
from datetime import datetime
from typing import Optional
from loguru import logger

# PDF
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import (
    SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle, PageBreak
)
from reportlab.lib.enums import TA_CENTER

# Excel
from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill, Alignment, Border, Side
from openpyxl.utils import get_column_letter


REGIMES = [("low", "Bajo contacto (IC)"), ("band", "En banda (UC)"), ("high", "Alto contacto (DC)")]
MIN_ADVANTAGE = 0.20


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


class ReportGenerator:
    """Genera los reportes PDF y Excel de una evaluación."""

    COLOR_TITLE = colors.HexColor("#003366")
    COLOR_SUCCESS = colors.HexColor("#28a745")
    COLOR_ERROR = colors.HexColor("#dc3545")
    COLOR_GRAY_BG = colors.HexColor("#f8f9fa")

    # Colores Excel (hex strings sin #)
    EXCEL_HEADER_BG = "003366"
    EXCEL_HEADER_FG = "FFFFFF"
    EXCEL_SUCCESS_BG = "d4edda"
    EXCEL_WARNING_BG = "fff3cd"
    EXCEL_BORDER = "dee2e6"

    def __init__(self, output_dir: str | Path = "runs/reportes", timestamp: Optional[str] = None):
        """
        Inicializa el generador de reportes.

        Args:
            output_dir: Directorio donde se guardarán los reportes
            timestamp: Sufijo de los nombres de archivo (por defecto, la hora actual)
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.timestamp = timestamp or datetime.now().strftime("%Y%m%d_%H%M%S")

    def _create_pdf_styles(self):
        """Crea estilos personalizados para el PDF."""
        styles = getSampleStyleSheet()

        styles.add(ParagraphStyle(
            name='CustomTitle',
            parent=styles['Heading1'],
            fontSize=22,
            textColor=self.COLOR_TITLE,
            spaceAfter=12,
            alignment=TA_CENTER,
            fontName='Helvetica-Bold'
        ))

        styles.add(ParagraphStyle(
            name='SectionHeader',
            parent=styles['Heading2'],
            fontSize=14,
            textColor=self.COLOR_TITLE,
            spaceAfter=12,
            fontName='Helvetica-Bold'
        ))

        styles.add(ParagraphStyle(
            name='CustomNormal',
            parent=styles['Normal'],
            fontSize=10,
            spaceAfter=6
        ))

        return styles

    def _table_style(self, font_size: int = 10) -> TableStyle:
        return TableStyle([
            # Encabezado
            ('BACKGROUND', (0, 0), (-1, 0), self.COLOR_TITLE),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
            # Datos
            ('BACKGROUND', (0, 1), (-1, -1), self.COLOR_GRAY_BG),
            ('FONTNAME', (0, 1), (-1, -1), 'Helvetica'),
            ('FONTSIZE', (0, 0), (-1, -1), font_size),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
            ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
            ('TOPPADDING', (0, 0), (-1, -1), 4),
            ('BOTTOMPADDING', (0, 0), (-1, -1), 4),
        ])

    def generate_pdf_report(self, data: dict) -> str:
        """
        Genera el reporte PDF de la evaluación.

        Args:
            data: Diccionario con las claves final, baseline, curve, actions,
                rollouts, dataset y checkpoint_dir (todas opcionales salvo final)

        Returns:
            Ruta del archivo PDF generado
        """
        logger.info("Generando reporte PDF...")

        filename = self.output_dir / f"evaluacion_{self.timestamp}.pdf"
        doc = SimpleDocTemplate(str(filename), pagesize=letter)
        story = []
        styles = self._create_pdf_styles()

        # PÁGINA 1 - RESUMEN
        story.append(Paragraph("Evaluación de la red SFDQN", styles['CustomTitle']))
        story.append(Spacer(1, 0.3*inch))

        final = data['final']
        info_data = [
            ["Dataset de prueba:", Path(data.get('dataset', 'N/A')).name],
            ["Checkpoints:", str(data.get('checkpoint_dir', 'N/A'))],
            ["Checkpoint final:", f"{final['checkpoint_id']} (paso {final['step']})"],
            ["Estados de prueba:", str(final['n_states'])],
        ]
        info_table = Table(info_data, colWidths=[2*inch, 4*inch])
        info_table.setStyle(TableStyle([
            ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
            ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 10),
            ('TEXTCOLOR', (0, 0), (0, -1), self.COLOR_TITLE),
        ]))
        story.append(info_table)
        story.append(Spacer(1, 0.3*inch))

        story.append(Paragraph("Precisión de acciones buenas", styles['SectionHeader']))
        baseline = data.get('baseline')
        summary_data = [
            ["Métrica", "Valor"],
            ["Precisión final", _fmt(final['precision'])],
            ["Línea base aleatoria", _fmt(baseline)],
            ["Ventaja sobre la línea base",
             _fmt(final['precision'] - baseline) if baseline is not None else "-"],
        ]
        summary_table = Table(summary_data, colWidths=[3.5*inch, 1.5*inch])
        summary_table.setStyle(self._table_style(11))
        if baseline is not None:
            advantage_color = self.COLOR_SUCCESS if final['precision'] - baseline >= MIN_ADVANTAGE else self.COLOR_ERROR
            summary_table.setStyle(TableStyle([('TEXTCOLOR', (1, 3), (1, 3), advantage_color)]))
        story.append(summary_table)
        story.append(Spacer(1, 0.3*inch))

        regime_data = [["Régimen", "Estados", "Precisión"]]
        for key, label in REGIMES:
            regime_data.append([label, str(final[f'{key}_states']), _fmt(final[f'{key}_precision'])])
        regime_table = Table(regime_data, colWidths=[2.5*inch, 1.2*inch, 1.2*inch])
        regime_table.setStyle(self._table_style())
        story.append(regime_table)

        # PÁGINA 2 - CURVA DE APRENDIZAJE
        curve = data.get('curve', [])
        if curve:
            story.append(PageBreak())
            story.append(Paragraph("Curva de aprendizaje", styles['SectionHeader']))

            # Limitar filas para no saturar el PDF
            shown = curve[:60]
            curve_data = [["Checkpoint", "Paso", "Precisión"]]
            curve_data += [[str(p['checkpoint_id']), str(p['step']), _fmt(p['precision'])] for p in shown]
            curve_table = Table(curve_data, colWidths=[1.2*inch, 1.2*inch, 1.2*inch])
            curve_table.setStyle(self._table_style(8))
            story.append(curve_table)

            if len(curve) > len(shown):
                story.append(Spacer(1, 0.2*inch))
                story.append(Paragraph(
                    f"<i>Nota: Se muestran los primeros {len(shown)} checkpoints de {len(curve)}. "
                    "Consulte el reporte Excel para la curva completa.</i>",
                    styles['CustomNormal']
                ))

        # PÁGINA 3 - ACCIONES Y ROLLOUTS
        actions = data.get('actions', [])
        rollouts = data.get('rollouts', [])
        if actions or rollouts:
            story.append(PageBreak())

        if actions:
            story.append(Paragraph("Distribución de acciones del dataset", styles['SectionHeader']))
            action_data = [["Acción", "Cantidad", "Frecuencia"]]
            action_data += [[str(a['action']), str(a['count']), _fmt(a['frequency'])] for a in actions]
            action_table = Table(action_data, colWidths=[1.2*inch, 1.2*inch, 1.2*inch])
            action_table.setStyle(self._table_style())
            story.append(action_table)
            story.append(Spacer(1, 0.3*inch))

        if rollouts:
            story.append(Paragraph("Rollouts", styles['SectionHeader']))
            rollout_data = [["Deriva (m/paso)", "Pasos", "En banda", "Sin contacto"]]
            for r in rollouts:
                rollout_data.append([f"{r['drift']:g}", str(r['steps']), _fmt(r['in_band_fraction']),
                                     str(r['lost_contact'])])
            rollout_table = Table(rollout_data, colWidths=[1.5*inch, 1*inch, 1*inch, 1.2*inch])
            rollout_table.setStyle(self._table_style())
            story.append(rollout_table)

        # Pie de página
        def add_footer(canvas, doc):
            canvas.saveState()
            canvas.setFont('Helvetica', 8)
            canvas.setFillColor(colors.grey)
            canvas.drawString(inch, 0.5*inch, f"Generado automáticamente por sfdqn-workbench - {self.timestamp}")
            canvas.drawRightString(letter[0] - inch, 0.5*inch, f"Página {canvas.getPageNumber()}")
            canvas.restoreState()

        doc.build(story, onFirstPage=add_footer, onLaterPages=add_footer)

        logger.info(f"✅ Reporte PDF generado: {filename}")
        return str(filename)

    def _write_header(self, ws, headers: list[str], font, fill, alignment, border) -> None:
        for col_num, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col_num)
            cell.value = header
            cell.font = font
            cell.fill = fill
            cell.alignment = alignment
            cell.border = border
        ws.freeze_panes = "A2"

    def generate_excel_report(self, data: dict) -> str:
        """
        Genera el reporte Excel (hojas Resumen, CurvaAprendizaje, Acciones, Rollout).

        Args:
            data: Mismo diccionario que generate_pdf_report

        Returns:
            Ruta del archivo Excel generado
        """
        logger.info("Generando reporte Excel...")

        filename = self.output_dir / f"evaluacion_{self.timestamp}.xlsx"
        wb = Workbook()

        # Estilos comunes
        header_font = Font(name='Calibri', size=11, bold=True, color=self.EXCEL_HEADER_FG)
        header_fill = PatternFill(start_color=self.EXCEL_HEADER_BG, end_color=self.EXCEL_HEADER_BG, fill_type='solid')
        header_alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)
        border_side = Side(style='thin', color=self.EXCEL_BORDER)
        border = Border(left=border_side, right=border_side, top=border_side, bottom=border_side)
        header = (header_font, header_fill, header_alignment, border)

        # HOJA 1 - RESUMEN
        ws = wb.active
        ws.title = "Resumen"
        ws['A1'] = "Evaluación de la red SFDQN"
        ws['A1'].font = Font(name='Calibri', size=16, bold=True, color=self.EXCEL_HEADER_BG)
        ws.merge_cells('A1:C1')

        final = data['final']
        baseline = data.get('baseline')
        rows = [
            ("Dataset de prueba", Path(data.get('dataset', 'N/A')).name),
            ("Checkpoint final", final['checkpoint_id']),
            ("Paso", final['step']),
            ("Estados de prueba", final['n_states']),
            ("Precisión final", final['precision']),
            ("Línea base aleatoria", baseline),
        ]
        for key, label in REGIMES:
            rows.append((f"Estados - {label}", final[f'{key}_states']))
            rows.append((f"Precisión - {label}", final[f'{key}_precision']))

        for r, (label, value) in enumerate(rows, 3):
            ws[f'A{r}'] = label
            ws[f'A{r}'].font = Font(bold=True)
            ws[f'B{r}'] = value
            ws[f'A{r}'].border = border
            ws[f'B{r}'].border = border
        ws.column_dimensions['A'].width = 34
        ws.column_dimensions['B'].width = 18

        # HOJA 2 - CURVA DE APRENDIZAJE
        ws_curve = wb.create_sheet("CurvaAprendizaje")
        curve = data.get('curve', [])
        curve_headers = ["checkpoint_id", "step", "precision", "n_states"]
        self._write_header(ws_curve, curve_headers, *header)
        best = max((p['precision'] for p in curve), default=None)
        success_fill = PatternFill(start_color=self.EXCEL_SUCCESS_BG, end_color=self.EXCEL_SUCCESS_BG, fill_type='solid')
        for row_num, point in enumerate(curve, 2):
            for col_num, key in enumerate(curve_headers, 1):
                cell = ws_curve.cell(row=row_num, column=col_num, value=point.get(key))
                cell.border = border
                if point['precision'] == best:
                    cell.fill = success_fill

        # HOJA 3 - ACCIONES
        ws_actions = wb.create_sheet("Acciones")
        action_headers = ["action", "count", "frequency"]
        self._write_header(ws_actions, action_headers, *header)
        warning_fill = PatternFill(start_color=self.EXCEL_WARNING_BG, end_color=self.EXCEL_WARNING_BG, fill_type='solid')
        for row_num, item in enumerate(data.get('actions', []), 2):
            for col_num, key in enumerate(action_headers, 1):
                cell = ws_actions.cell(row=row_num, column=col_num, value=item[key])
                cell.border = border
                # Cobertura mínima esperada por acción
                if item['frequency'] < 0.05:
                    cell.fill = warning_fill

        # HOJA 4 - ROLLOUT
        ws_rollout = wb.create_sheet("Rollout")
        rollout_headers = ["drift", "steps", "warmup", "in_band_fraction", "lost_contact"]
        self._write_header(ws_rollout, rollout_headers, *header)
        for row_num, item in enumerate(data.get('rollouts', []), 2):
            for col_num, key in enumerate(rollout_headers, 1):
                ws_rollout.cell(row=row_num, column=col_num, value=item[key]).border = border

        for sheet, headers in ((ws_curve, curve_headers), (ws_actions, action_headers), (ws_rollout, rollout_headers)):
            for i in range(1, len(headers) + 1):
                sheet.column_dimensions[get_column_letter(i)].width = 18

        wb.save(filename)

        logger.info(f"✅ Reporte Excel generado: {filename}")
        return str(filename)

    def generate_both(self, data: dict) -> dict:
        """
        Genera ambos reportes (PDF y Excel).

        Args:
            data: Diccionario con los resultados de la evaluación

        Returns:
            Dict con rutas: {"pdf": "...", "excel": "..."}
        """
        logger.info("Generando reportes PDF y Excel...")

        pdf_path = self.generate_pdf_report(data)
        excel_path = self.generate_excel_report(data)

        return {
            "pdf": pdf_path,
            "excel": excel_path
        }
