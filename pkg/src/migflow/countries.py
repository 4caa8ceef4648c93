"""Default country universe.

181 ISO-3166-1 alpha-2 codes: sovereign states minus micro-states and
countries where the platform is unavailable, plus HK, TW, PS and PR.
"""

DEFAULT_UNIVERSE: tuple[str, ...] = tuple("""
AE AF AG AL AM AO AR AT AU AZ BA BB BD BE BF BG BH BI BJ BN BO BR BS BT BW BY
BZ CA CD CF CG CH CI CL CM CO CR CU CV CY CZ DE DJ DK DO DZ EC EE EG ER ES ET
FI FJ FR GA GB GD GE GH GM GN GQ GR GT GW GY HK HN HR HT HU ID IE IL IN IQ IS
IT JM JO JP KE KG KH KM KR KW KZ LA LB LC LK LR LS LT LU LV LY MA MD ME MG MK
ML MM MN MR MT MU MV MW MX MY MZ NA NE NG NI NL NO NP NZ OM PA PE PG PH PK PL
PR PS PT PY QA RO RS RU RW SA SB SC SD SE SG SI SK SL SN SO SR SS ST SV SY SZ
TD TG TH TJ TL TN TO TR TT TW TZ UA UG US UY UZ VC VE VN VU WS YE ZA ZM ZW
""".split())

assert len(DEFAULT_UNIVERSE) == 181

OECD: frozenset[str] = frozenset("""
AT AU BE CA CH CL CO CR CZ DE DK EE ES FI FR GB GR HU IE IL IS IT JP KR LT LU
LV MX NL NO NZ PL PT SE SI SK TR US
""".split())
