"""Extended GLMs on double exponential families with dropout regularization.

Subpackages by concern: ``families`` (DEF densities, normalizers, samplers),
``basis`` (natural/cyclic B-splines), ``model`` (likelihood, scores, Fisher
information), ``dropout`` (noise, MC oracles, closed-form penalties),
``optim`` (SGD/ADADELTA engine), ``pmle`` (difference-penalty baseline),
``tuning`` (random-search CV), ``simlab`` (simulation protocol), ``cli``
(command-line surface).
"""

__version__ = "0.1.0"
