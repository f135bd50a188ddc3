from divdr.lattice.schemas import (  # noqa: F401
    Edge,
    EdgeCostTable,
    GateActivationMap,
    LatticeConfig,
    directions_for,
)
from divdr.lattice.network import (  # noqa: F401
    LatticeOutput,
    build_cost_table,
    edge_position,
    enumerate_edges,
    expected_cost,
    expected_cost_tensor,
    gate_forward,
    init_params,
    lattice_forward,
    pruned_cost,
)
