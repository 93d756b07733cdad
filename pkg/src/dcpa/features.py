"""Token feature construction shared by dataset statistics and the operator.

Server token: [inlet center xyz, outlet center xyz, power_w, flow_m3s] (8).
ACU token:    [supply center xyz, supply_temp_c, flow_m3s] (5).
"""

from __future__ import annotations

import numpy as np

SERVER_FEATURES = 8
ACU_FEATURES = 5


def server_features(scene, scenario):
    rows = []
    for i, srv in enumerate(scene.servers):
        rows.append([
            *srv.inlet_face.rect.center(),
            *srv.outlet_face.rect.center(),
            scenario.server_power_w[i],
            scenario.server_flow_m3s[i],
        ])
    return np.asarray(rows, dtype=np.float64).reshape(len(scene.servers), SERVER_FEATURES)


def acu_features(scene, scenario):
    rows = []
    for i, acu in enumerate(scene.acus):
        rows.append([
            *acu.supply_face.rect.center(),
            scenario.acu_supply_temp_c[i],
            scenario.acu_flow_m3s[i],
        ])
    return np.asarray(rows, dtype=np.float64).reshape(len(scene.acus), ACU_FEATURES)
