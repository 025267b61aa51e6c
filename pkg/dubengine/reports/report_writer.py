"""
Генерация отчетов DubEngine: JSON отчеты, CSV таблицы, HTML сводка
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

from jinja2 import Environment, select_autoescape

from ..utils.scoring import DubReport

logger = logging.getLogger(__name__)

TABLE_COLUMNS = [
    "mode",
    "strategy",
    "seed",
    "sync_corr",
    "sync_distance",
    "gesture_sync",
    "identity_drift_mean",
    "identity_drift_max",
    "boundary_jerk_ratio",
    "control_strength",
    "camera_error",
    "adaptive_control",
]

SUMMARY_TEMPLATE = """<!DOCTYPE html>
<html lang="ru">
<head>
<meta charset="UTF-8">
<title>{{ title }}</title>
<style>
body { font-family: Arial, sans-serif; margin: 40px; color: #333; }
table { border-collapse: collapse; margin-bottom: 30px; }
th, td { border: 1px solid #e2e8f0; padding: 6px 12px; text-align: right; }
th { background: #f8fafc; }
.status-good { color: #059669; }
.status-warning { color: #d97706; }
.status-critical { color: #dc2626; }
</style>
</head>
<body>
<h1>{{ title }}</h1>
<h2>Средние по стратегиям и режимам</h2>
<table>
<tr>{% for column in columns %}<th>{{ column }}</th>{% endfor %}</tr>
{% for row in rows %}<tr>{% for column in columns %}<td>{{ row[column] | fmt }}</td>{% endfor %}</tr>
{% endfor %}
</table>
{% if checks %}
<h2>Проверки</h2>
<table>
<tr><th>Проверка</th><th>Среднее A</th><th>Среднее B</th><th>p (знаковый тест)</th><th>Статус</th></tr>
{% for check in checks %}<tr>
<td>{{ check.name }}</td><td>{{ check.mean_a | fmt }}</td><td>{{ check.mean_b | fmt }}</td>
<td>{{ check.p_value | fmt }}</td>
<td class="status-{{ 'good' if check.passed else 'critical' }}">{{ 'выполнена' if check.passed else 'не выполнена' }}</td>
</tr>{% endfor %}
</table>
{% endif %}
{% if recommendations %}
<h2>Рекомендации</h2>
<ul>{% for item in recommendations %}<li>{{ item }}</li>{% endfor %}</ul>
{% endif %}
</body>
</html>
"""


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


class ReportWriter:
    """Запись отчетов в каталог запуска"""

    def __init__(self):
        self.env = Environment(autoescape=select_autoescape(default=True))
        self.env.filters["fmt"] = _fmt
        self.summary_template = self.env.from_string(SUMMARY_TEMPLATE)

    def write_report(self, report: DubReport, path: Union[str, Path]) -> Path:
        """DubReport в JSON"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n", encoding="utf-8")
        return path

    def table_rows(self, runs: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
        """Строки таблицы: один запуск - одна строка"""
        rows = []
        for run in runs:
            report = run["report"]
            row = {"mode": run["mode"], "strategy": run["strategy"], "seed": run["seed"]}
            for column in TABLE_COLUMNS[3:]:
                row[column] = getattr(report, column)
            rows.append(row)
        return rows

    def render_csv(self, rows: Sequence[Dict[str, Any]], columns: Sequence[str] = TABLE_COLUMNS) -> str:
        """CSV текст с фиксированным порядком колонок"""
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (f"{value:.6f}" if isinstance(value, float) else value) for key, value in row.items()})
        return buffer.getvalue()

    def write_table(self, rows: Sequence[Dict[str, Any]], path: Union[str, Path],
                    columns: Sequence[str] = TABLE_COLUMNS) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render_csv(rows, columns), encoding="utf-8")
        logger.info("Таблица: %d строк -> %s", len(rows), path)
        return path

    def render_summary(self, title: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                       checks: Sequence[Dict[str, Any]] = (), recommendations: Sequence[str] = ()) -> str:
        """HTML сводка абляции"""
        return self.summary_template.render(
            title=title, rows=rows, columns=columns, checks=checks, recommendations=recommendations
        )

    def write_summary(self, path: Union[str, Path], **kwargs) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render_summary(**kwargs), encoding="utf-8")
        return path

    def write_json(self, payload: Dict[str, Any], path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
