import pandas as pd
import streamlit as st
import streamlit.components.v1 as components
from utils_sidebar import mostrar_sidebar

from shield.dataset import load_artifacts
from shield.evidence import EvidenceNeighborhood
from shield.investigate import DetectionLabels
from shield.plots import neighborhood_network, window_figure

# ==============================
# CONFIGURACIÓN GENERAL
# ==============================
st.set_page_config(
    page_title="SHIELD",
    page_icon="🛡️",
    layout="wide",
    initial_sidebar_state="expanded",
)

# ==============================
# SIDEBAR GLOBAL
# ==============================
out_dir = mostrar_sidebar()
st.title("🛡️ SHIELD")
st.markdown("### Resultados de una ejecución del pipeline")
st.markdown("---")

if not out_dir.is_dir():
    st.warning(f"No existe el directorio {out_dir}")
    st.stop()

artifacts = load_artifacts(out_dir)
if not artifacts:
    st.info("El directorio no contiene artefactos. Ejecuta primero el pipeline. 📊")
    st.stop()

# ==============================
# MÉTRICAS
# ==============================
if "metrics" in artifacts:
    st.subheader("📊 Métricas")
    st.dataframe(pd.DataFrame(artifacts["metrics"]).T)

# ==============================
# VENTANAS DE ATAQUE
# ==============================
if "selection" in artifacts:
    st.subheader("📈 Ventanas de ataque")
    st.plotly_chart(window_figure(artifacts["selection"]["selection"]), use_container_width=True)

# ==============================
# ENTIDADES DE ATAQUE
# ==============================
labels = None
if "labels" in artifacts:
    labels = DetectionLabels.from_dict(artifacts["labels"])
    st.subheader("🎯 Entidades de ataque")
    st.dataframe(pd.DataFrame(artifacts["labels"]["attack_entities"]))

# ==============================
# INFORME
# ==============================
report_md = out_dir / "report.md"
if report_md.exists():
    st.subheader("📝 Informe de investigación")
    st.markdown(report_md.read_text(encoding="utf-8"))

# ==============================
# VECINDARIO DE EVIDENCIA
# ==============================
if "evidence" in artifacts:
    neighborhood = EvidenceNeighborhood.from_dict(artifacts["evidence"]["neighborhood"])
    if neighborhood.events:
        st.subheader("🕸️ Vecindario de evidencia")
        net = neighborhood_network(neighborhood, labels)
        components.html(net.generate_html(), height=740)
