"""
Main command set.
"""
from dasnlab.main.commands import evaluate_command, gen_data, probe, report, train

COMMANDS = (gen_data, train, evaluate_command, probe, report)
