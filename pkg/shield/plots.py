"""
plots.py
========
Figuras de una ejecución del pipeline:

- `window_figure`          → puntuación de cada ventana temporal frente a T_ano (plotly).
- `neighborhood_network`   → grafo de procedencia del vecindario de evidencia (pyvis).
"""

from pathlib import Path
from typing import Any

from loguru import logger
import pandas as pd
import plotly.graph_objects as go
from pyvis.network import Network

from shield.detect import WindowSelection
from shield.evidence import EvidenceNeighborhood, object_kind
from shield.events import entity_names
from shield.investigate import DetectionLabels

_KIND_COLORS = {"process": "#4C78A8", "file": "#72B7B2", "ip": "#F58518"}
_FLAGGED_COLOR = "#E45756"


def _as_selection(selection: WindowSelection | dict[str, Any]) -> WindowSelection:
    if isinstance(selection, WindowSelection):
        return selection
    return WindowSelection.from_dict(selection)


# ======================================================
# Función: window_figure
# ======================================================
def window_figure(selection: WindowSelection | dict[str, Any]) -> go.Figure:
    """
    Barras con la puntuación de cada ventana; las seleccionadas van resaltadas y T_ano
    se dibuja como línea horizontal.
    """
    selection = _as_selection(selection)
    chosen = {(w.start, w.end) for w in selection.selected}
    df = pd.DataFrame(
        {
            "inicio": [pd.Timestamp(w.start, unit="us", tz="UTC") for w in selection.windows],
            "score": [w.score for w in selection.windows],
            "eventos": [len(w.event_indices) for w in selection.windows],
            "seleccionada": [(w.start, w.end) in chosen for w in selection.windows],
        }
    )

    fig = go.Figure()
    for flag, color, name in ((False, "#9D9D9D", "Ventana"), (True, _FLAGGED_COLOR, "Ataque")):
        part = df[df["seleccionada"] == flag]
        fig.add_trace(
            go.Bar(
                x=part["inicio"],
                y=part["score"],
                name=name,
                marker_color=color,
                customdata=part["eventos"],
                hovertemplate="%{x}<br>score=%{y:.4f}<br>eventos=%{customdata}<extra></extra>",
            )
        )
    fig.add_hline(
        y=selection.t_ano,
        line_dash="dash",
        annotation_text=f"T_ano = {selection.t_ano:.4f}",
    )
    fig.update_layout(
        title="Puntuación de anomalía por ventana",
        xaxis_title="Inicio de la ventana (UTC)",
        yaxis_title="Media top-k%",
        barmode="overlay",
        template="plotly_white",
    )
    return fig


def save_window_figure(selection: WindowSelection | dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    window_figure(selection).write_html(path, include_plotlyjs="cdn")
    logger.success(f"📈 Figura de ventanas guardada en {path}")
    return path


# ======================================================
# Función: neighborhood_network
# ======================================================
def neighborhood_network(
    neighborhood: EvidenceNeighborhood,
    labels: DetectionLabels | None = None,
) -> Network:
    """
    Red dirigida sujeto → objeto del vecindario. Las etiquetas de los nodos son los nombres
    visibles; las entidades marcadas como ataque se pintan en rojo y las semillas con borde
    grueso.
    """
    names = entity_names(neighborhood.events)
    flagged = set(labels.attack_entities) if labels is not None else set()
    seeds = set(neighborhood.seed_nodes)

    net = Network(height="720px", width="100%", directed=True, cdn_resources="remote")
    kinds: dict[str, str] = {}
    for event in neighborhood.events:
        kinds.setdefault(event.subject_id, "process")
        kinds.setdefault(event.object_id, object_kind(event))

    for node, kind in kinds.items():
        net.add_node(
            node,
            label=names.get(node, node),
            title=f"{kind}: {names.get(node, node)}",
            color=_FLAGGED_COLOR if node in flagged else _KIND_COLORS.get(kind, "#BAB0AC"),
            borderWidth=4 if node in seeds else 1,
            shape="box" if kind == "process" else "ellipse",
        )

    # una arista por (sujeto, objeto, tipo) con el número de eventos como peso
    edges = (
        pd.DataFrame(
            [(e.subject_id, e.object_id, e.event_type) for e in neighborhood.events],
            columns=["src", "dst", "type"],
        )
        .value_counts()
        .reset_index(name="count")
    )
    for row in edges.itertuples(index=False):
        net.add_edge(row.src, row.dst, title=f"{row.type} x{row.count}", value=int(row.count))
    return net


def save_neighborhood_html(
    neighborhood: EvidenceNeighborhood,
    path: Path,
    labels: DetectionLabels | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not neighborhood.events:
        logger.warning("⚠️ Vecindario vacío: no se genera la red")
        path.write_text("<p>Vecindario vacío</p>", encoding="utf-8")
        return path
    net = neighborhood_network(neighborhood, labels)
    path.write_text(net.generate_html(), encoding="utf-8")
    logger.success(f"🕸️ Red del vecindario guardada en {path}")
    return path
