"""Physical constants and file-format identifiers."""

# Dry air near 25 degC
RHO_AIR = 1.177  # kg/m^3
CP_AIR = 1005.0  # J/(kg K)

# Effective (turbulent) diffusivity for the coarse-grid transport solve.
# The molecular value (~2e-5 m^2/s) would be unphysically sharp at 0.5 m cells.
ALPHA_EFF = 0.05  # m^2/s

# Design temperature rise used to derive server airflow from power draw:
# Q = P / (rho * cp * DT_DESIGN), a typical server fan-curve proportionality.
DT_DESIGN = 12.0  # K

FIELD_MAGIC = b"DCPA"
FIELD_VERSION = 1

CHECKPOINT_MAGIC = b"DCPW"
CHECKPOINT_VERSION = 1

SCENE_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1


def server_flow_from_power(power_w):
    """Server volumetric flow (m^3/s) implied by its power at the design dT."""
    return power_w / (RHO_AIR * CP_AIR * DT_DESIGN)


def server_delta_t(power_w, flow_m3s):
    """Closed-form air temperature rise across one server, K."""
    return power_w / (RHO_AIR * CP_AIR * flow_m3s)
