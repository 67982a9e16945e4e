from groundcap.commands.data import MineVocab, ScoreProposals, Synth
from groundcap.commands.decode import Eval, Generate, Ground
from groundcap.commands.svo import SvoTrain
from groundcap.commands.train import GradCheck, Train

COMMANDS = [
    MineVocab,
    SvoTrain,
    ScoreProposals,
    Train,
    Generate,
    Ground,
    Eval,
    Synth,
    GradCheck,
]
