"""Static SVG boxplot rendering without a plotting dependency.

Output is deterministic byte-for-byte for a fixed input: coordinates are
formatted at fixed precision and no timestamps or ids are embedded.
"""

from .errors import DegenerateInputError

_COLORS = ["#c0392b", "#27ae60", "#2980b9", "#8e44ad", "#f39c12"]

BOX_WIDTH = 14
GROUP_GAP = 18
MARGIN_LEFT = 60
MARGIN_TOP = 30
MARGIN_BOTTOM = 60
PLOT_HEIGHT = 320


def _fmt(x):
    return f"{x:.2f}"


def render_boxplot_svg(path, groups, labels, title="", y_label="angle (degrees)"):
    """Grouped boxplots: one box per label inside each group.

    `groups` is an ordered list of (group_name, [BoxplotStats, ...]) with one
    stats entry per label (None entries are skipped).
    """
    groups = list(groups)
    if not groups:
        raise DegenerateInputError("no boxplot groups")
    lows, highs = [], []
    for _, stats_list in groups:
        for stats in stats_list:
            if stats is None:
                continue
            lows.append(min(stats.whisker_low, *(stats.outliers or (stats.whisker_low,))))
            highs.append(max(stats.whisker_high, *(stats.outliers or (stats.whisker_high,))))
    if not lows:
        raise DegenerateInputError("all boxplot groups are empty")
    y_min, y_max = min(lows), max(highs)
    if y_max == y_min:
        y_max = y_min + 1.0
    pad = 0.05 * (y_max - y_min)
    y_min -= pad
    y_max += pad

    n_labels = max(len(stats_list) for _, stats_list in groups)
    group_width = n_labels * BOX_WIDTH + GROUP_GAP
    width = MARGIN_LEFT + len(groups) * group_width + 140
    height = MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM

    def y(value):
        frac = (value - y_min) / (y_max - y_min)
        return MARGIN_TOP + (1.0 - frac) * PLOT_HEIGHT

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif">{title}</text>'
        )
    # y axis with ticks
    axis_bottom = MARGIN_TOP + PLOT_HEIGHT
    parts.append(
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
        f'y2="{axis_bottom}" stroke="black"/>'
    )
    for i in range(5):
        value = y_min + i * (y_max - y_min) / 4
        ty = y(value)
        parts.append(
            f'<line x1="{MARGIN_LEFT - 4}" y1="{_fmt(ty)}" x2="{MARGIN_LEFT}" '
            f'y2="{_fmt(ty)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{_fmt(ty + 3)}" text-anchor="end" '
            f'font-size="10" font-family="sans-serif">{value:.1f}</text>'
        )
    parts.append(
        f'<text x="14" y="{MARGIN_TOP + PLOT_HEIGHT / 2:.1f}" '
        f'text-anchor="middle" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 14 {MARGIN_TOP + PLOT_HEIGHT / 2:.1f})">'
        f"{y_label}</text>"
    )

    for g, (group_name, stats_list) in enumerate(groups):
        group_x = MARGIN_LEFT + GROUP_GAP / 2 + g * group_width
        for b, stats in enumerate(stats_list):
            if stats is None:
                continue
            color = _COLORS[b % len(_COLORS)]
            x0 = group_x + b * BOX_WIDTH + 2
            x1 = x0 + BOX_WIDTH - 4
            xc = (x0 + x1) / 2
            y_q1, y_q3 = y(stats.q1), y(stats.q3)
            parts.append(
                f'<line x1="{_fmt(xc)}" y1="{_fmt(y(stats.whisker_high))}" '
                f'x2="{_fmt(xc)}" y2="{_fmt(y_q3)}" stroke="{color}"/>'
            )
            parts.append(
                f'<line x1="{_fmt(xc)}" y1="{_fmt(y_q1)}" x2="{_fmt(xc)}" '
                f'y2="{_fmt(y(stats.whisker_low))}" stroke="{color}"/>'
            )
            parts.append(
                f'<rect class="box" x="{_fmt(x0)}" y="{_fmt(y_q3)}" '
                f'width="{_fmt(x1 - x0)}" height="{_fmt(y_q1 - y_q3)}" '
                f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>'
            )
            y_med = y(stats.median)
            parts.append(
                f'<line x1="{_fmt(x0)}" y1="{_fmt(y_med)}" x2="{_fmt(x1)}" '
                f'y2="{_fmt(y_med)}" stroke="{color}" stroke-width="2"/>'
            )
            for outlier in stats.outliers:
                parts.append(
                    f'<circle class="outlier" cx="{_fmt(xc)}" '
                    f'cy="{_fmt(y(outlier))}" r="1.5" fill="{color}"/>'
                )
        parts.append(
            f'<text x="{_fmt(group_x + n_labels * BOX_WIDTH / 2)}" '
            f'y="{axis_bottom + 14}" text-anchor="end" font-size="9" '
            f'font-family="sans-serif" transform="rotate(-45 '
            f'{_fmt(group_x + n_labels * BOX_WIDTH / 2)} {axis_bottom + 14})">'
            f"{group_name}</text>"
        )

    # legend
    legend_x = width - 130
    for b, label in enumerate(labels):
        color = _COLORS[b % len(_COLORS)]
        ly = MARGIN_TOP + 10 + b * 16
        parts.append(
            f'<rect x="{legend_x}" y="{ly}" width="10" height="10" '
            f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>'
        )
        parts.append(
            f'<text x="{legend_x + 14}" y="{ly + 9}" font-size="10" '
            f'font-family="sans-serif">{label}</text>'
        )
    parts.append("</svg>")
    document = "\n".join(parts) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(document)
    return document
