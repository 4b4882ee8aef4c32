"""Dynamic-consent network stack.

Subsystems: DID identity layer (`identity`), permissioned consent ledger
(`ledger`), participant/organization wallets (`wallet`), proxy web portal
(`portal`), message mediator (`mediator`), enrollment authority
(`enrollment`), and the scenario/adversary/benchmark harness
(`ccn.harness`, CLI entry point ``ccn``).
"""

__version__ = "0.1.0"
