"""Vertically federated training and inference between one active and several passive parties."""
from .model import (COMPLETELY_SECURE, STANDARD, FedModel, FedTree, LookupTable, load_lookup,
                    load_model, resolve_tree, save_lookup, save_model)
from .parties import ACTIVE_PARTY_ID, ActiveParty, PassiveParty, config_checksum
from .session import (Federation, PartyData, cost_report, federated_predict, run_inference,
                      train_federated, vertical_partition)

__all__ = [
    "ACTIVE_PARTY_ID", "COMPLETELY_SECURE", "STANDARD", "ActiveParty", "FedModel", "FedTree",
    "Federation", "LookupTable", "PartyData", "PassiveParty", "config_checksum", "cost_report",
    "federated_predict", "load_lookup", "load_model", "resolve_tree", "run_inference", "save_lookup",
    "save_model", "train_federated", "vertical_partition",
]
