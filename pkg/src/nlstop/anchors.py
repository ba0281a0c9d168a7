"""Stable anchor strings attached to every check in a report.

Each anchor names the statement a check verifies. They are plain
identifiers so reports stay greppable; tests key on them.
"""

MONOTONICITY = "axiom:monotonicity"
STRICT_MONOTONICITY = "axiom:strict-monotonicity"
TIME_CONSISTENCY = "axiom:time-consistency"
ZERO_ONE = "axiom:zero-one-law"
TRANSLATION = "axiom:translation-invariance"
LOCAL = "property:local"
CONSTANT_PRESERVING = "property:constant-preserving"
SUB_ADDITIVITY = "property:sub-additivity"
HOMOGENEITY = "property:positive-homogeneity"
DOMINATION = "domination:E<=Ehat"
DOMINATION_ABS = "domination:|E[X]-E[Y]|<=Ehat[|X-Y|]"

SNELL_VALUE = "single:value=backward-induction"
SUPERMARTINGALE = "single:v-is-E-supermartingale-system"
SUP_FORMULA = "single:E[v(S)]=sup-E[X(tau)]"
OPTIMALITY_EQUIV = "single:optimality-(a)<=>(b)<=>(c)"
TAU_STAR_OPTIMAL = "single:tau*-optimal"
TAU_STAR_MINIMAL = "single:tau*-minimal-among-optimal"
EPS_BOUND = "single:lambda*E[v(S)]<=E[X(tau^lambda)]"
EPS_VALUE = "single:E[v(tau^lambda)]=v(S)"
EPS_MONOTONE = "single:tau^lambda-increasing-to-tau*"

MULTI_VALUE = "multi:v=u"
MULTI_ASSEMBLY = "multi:assembled-vector-optimal"
MULTI_FIRST_STOP = "multi:min-tau_i=theta*"
MULTI_WITNESS = "multi:witness-attains-max"
MULTI_PAIR = "multi:d=2-reduction-matches"
ADDITIVE = "multi:additive-separability"
MULTI_MINIMAL = "multi:d-minimal"
NECESSARY = "multi:necessary-conditions"
PAIR_B_SET = "multi:d=2-B={sigma1<=sigma2}={u1(theta*)<=u2(theta*)}"
PAIR_A_SUBSET = "multi:d=2-A={tau1<=tau2}-subset-{u1<=u2}"
