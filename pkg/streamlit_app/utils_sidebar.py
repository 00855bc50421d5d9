from pathlib import Path

import streamlit as st

from shield.config import PROCESSED_DATA_DIR


# ==============================================
# CONFIGURACIÓN GENERAL
# ==============================================
def mostrar_sidebar() -> Path:
    """Encabezado común y selector del directorio de salida de una ejecución."""

    # --- Bloque superior con encabezado ---
    with st.sidebar:
        st.markdown("### 🛡️ SHIELD")
        st.markdown("Detección e investigación de ataques en logs de auditoría")
        st.markdown("---")
        out_dir = st.text_input("📁 Directorio de salida", value=str(PROCESSED_DATA_DIR))

    # --- Bloque inferior ---
    st.sidebar.markdown("---")
    st.sidebar.markdown("Genera una ejecución con `shield run --config pipeline.json`")
    return Path(out_dir)
