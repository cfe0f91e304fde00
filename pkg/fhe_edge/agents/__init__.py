"""Backend and edge agents and their wire protocol.

Kept free of imports so that loading :mod:`fhe_edge.agents.edge` never pulls
in the key vault.
"""
