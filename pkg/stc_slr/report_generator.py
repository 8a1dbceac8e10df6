import json

from jinja2 import Environment


class ReportGenerator:
    HTML_TEMPLATE = """
    <!DOCTYPE html>
    <html lang="en">
    <head>
        <meta charset="UTF-8">
        <meta name="viewport" content="width=device-width, initial-scale=1.0">
        <title>STC Runs</title>
        <style>
            body {
                font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
                margin: 20px;
            }
            table {
                border-collapse: collapse;
                width: 100%;
                box-shadow: 0 2px 3px rgba(0,0,0,0.1);
                margin-bottom: 24px;
            }
            th, td {
                border: 1px solid #ddd;
                text-align: left;
                padding: 8px;
            }
            th {
                background-color: #f2f2f2;
            }
            tr:nth-child(even) {
                background-color: #f9f9f9;
            }
            pre {
                background-color: #282c34 !important;
                color: #ffffff !important;
                padding: 10px;
                border-radius: 5px;
                overflow-x: auto;
                white-space: pre-wrap;
                font-family: 'Courier New', Courier, monospace;
            }
        </style>
    </head>
    <body>
        <h2>Evaluations</h2>
        <table>
            <tr>
                <th>Run</th>
                <th>Protocol</th>
                <th>Percent</th>
                <th>Seed</th>
                <th>P-I top-1</th>
                <th>P-I top-5</th>
                <th>P-C top-1</th>
                <th>P-C top-5</th>
                <th>Details</th>
            </tr>
            {% for e in evaluations %}
            <tr>
                <td>{{ e.run_name }}</td>
                <td>{{ e.protocol }}</td>
                <td>{{ e.percent }}</td>
                <td>{{ e.seed }}</td>
                <td>{{ e.pi_top1 | fmt }}</td>
                <td>{{ e.pi_top5 | fmt }}</td>
                <td>{{ e.pc_top1 | fmt }}</td>
                <td>{{ e.pc_top5 | fmt }}</td>
                <td>
                    <details>
                        <summary>View More</summary>
                        <pre><code>{{ e.payload_text }}</code></pre>
                    </details>
                </td>
            </tr>
            {% endfor %}
        </table>
        <h2>Pre-training loss</h2>
        <table>
            <tr>
                <th>Run</th>
                <th>Steps</th>
                <th>First total</th>
                <th>Last total</th>
                <th>Min total</th>
            </tr>
            {% for s in loss_summary %}
            <tr>
                <td>{{ s.run_name }}</td>
                <td>{{ s.steps }}</td>
                <td>{{ s.first | fmt }}</td>
                <td>{{ s.last | fmt }}</td>
                <td>{{ s.min | fmt }}</td>
            </tr>
            {% endfor %}
        </table>
    </body>
    </html>
    """

    @classmethod
    def summarize_losses(cls, steps):
        """
        Collapse per-step rows into one first/last/min line per run.

        :param steps: List of step dictionaries with `run_name` and `total`.
        :return: List of dictionaries in first-seen run order.
        """
        runs = {}
        for step in steps:
            if step.get("total") is None:
                continue
            summary = runs.setdefault(
                step["run_name"],
                {"run_name": step["run_name"], "steps": 0, "first": step["total"], "min": step["total"]},
            )
            summary["steps"] += 1
            summary["last"] = step["total"]
            summary["min"] = min(summary["min"], step["total"])
        return list(runs.values())

    @classmethod
    def generate_report(cls, evaluations, steps, file_path):
        """
        Renders the HTML report and writes it to a file.

        :param evaluations: List of evaluation dictionaries.
        :param steps: List of training step dictionaries.
        :param file_path: Path to the HTML file where the report will be written.
        """
        for e in evaluations:
            e["payload_text"] = json.dumps(e.get("payload", {}), indent=2, sort_keys=True)

        environment = Environment()
        environment.filters["fmt"] = lambda v: "-" if v is None else f"{v:.2f}"
        template = environment.from_string(cls.HTML_TEMPLATE)
        html_content = template.render(evaluations=evaluations, loss_summary=cls.summarize_losses(steps))

        with open(file_path, "w") as file:
            file.write(html_content)
