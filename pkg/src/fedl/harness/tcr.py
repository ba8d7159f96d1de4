"""Finbench-style complex read queries in the pattern language.

The eight supported listings execute; the other four each exercise one
construct the planner rejects, and :data:`UNSUPPORTED` names the error
feature each must raise.
"""

from __future__ import annotations

from ..querylang import CYCLE, DEGREE_CONDITION, LABEL_DISJUNCTION, SET_SIMILARITY

TCR1 = """SELECT other.id, medium.mediumType, medium.id
FROM "ldbc-finbench"
MATCH (medium:Medium WHERE "isBlocked:true")
      ->(:MediumSignInAccount)
      ->(other:Account)
      (
        (:Account)
        <-(:AccountTransferAccount WHERE "createTime:{START TO END}")
        <-(:Account)
      ){1,3}
      (account:Account WHERE "id:ACCOUNT_ID")
"""

TCR2 = """SELECT other.id, l.loanAmount, l.balance
FROM "ldbc-finbench"
MATCH (l:Loan)
      ->(:LoanDepositAccount WHERE "createTime:{START TO END}")
      ->(other:Account)
      (
        (:Account)
        ->(:AccountTransferAccount WHERE "createTime:{START TO END}")
        ->(:Account)
      ){1,3}
      (:Account)<-(:PersonOwnAccount)<-(person:Person WHERE "id:PERSON_ID")
"""

TCR3 = """SELECT trace
FROM "ldbc-finbench"
MATCH trace = ALL SHORTEST (src:Account WHERE "id:ACCOUNT_ID")
      (
        (:Account)
        ->(:AccountTransferAccount WHERE "createTime:{START TO END}")
        ->(:Account)
      ){1,10}
      (dst:Account WHERE "id:ACCOUNT_ID")
"""

TCR5 = """SELECT trace
FROM "ldbc-finbench"
MATCH trace =
      (
        (:Account)
        <-(:AccountTransferAccount WHERE "createTime:{START TO END}")
        <-(:Account)
      ) {1,3}
      (account:Account)<-(:PersonOwnAccount)<-(:Person WHERE "id:PERSON_ID")
"""

TCR7 = """SELECT src.id, dst.id, edge1.amount, edge2.amount
FROM "ldbc-finbench"
MATCH (src:Account)
      ->(edge1:AccountTransferAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      ->(mid:Account WHERE "id:PERSON_ID")
      ->(edge2:AccountTransferAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      ->(dst:Account)
"""

TCR9 = """SELECT edge1.amount, edge2.amount, edge3.amount, edge4.amount
FROM "ldbc-finbench"
MATCH (up:Account)
      ->(edge3:AccountTransferAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      ->(mid:Account WHERE "id:PERSON_ID")
      ->(edge4:AccountTransferAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      ->(down:Account)
      (mid)<-(edge1:LoanDepositAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      (mid)<-(edge2:AccountRepayLoan WHERE "amount:{0 TO *} AND createTime:{START TO END}")
"""

TCR11 = """SELECT l.loanAmount
FROM "ldbc-finbench"
MATCH (l:Loan)<-(:PersonApplyLoan)<-(p2:Person)
      (
        (:Person)<-(g:PersonGuaranteePerson WHERE "createTime:{START TO END}")
        <-(:Person)
      ) {1,10}
      (p1:Person WHERE "id:PERSON_ID")
"""

TCR12 = """SELECT compAcc.id, edge2.amount
FROM "ldbc-finbench"
MATCH (company:Company)
          ->(:CompanyOwnAccount)
          ->(compAcc:Account)
          <-(edge2:AccountTransferAccount WHERE "createTime:{START TO END}")
          <-(pAcc:Account)
          <-(:PersonOwnAccount)
          <-(person:Person WHERE "id:PERSON_ID")
"""

# transfer triangle closing back on the start account
TCR4 = """SELECT other.id
FROM "ldbc-finbench"
MATCH (src:Account WHERE "id:ACCOUNT_ID")
      ->(:AccountTransferAccount WHERE "createTime:{START TO END}")
      ->(dst:Account)
      ->(:AccountTransferAccount WHERE "createTime:{START TO END}")
      ->(other:Account)
      ->(:AccountTransferAccount WHERE "createTime:{START TO END}")
      ->(src)
"""

# accounts fed by more than three inbound transfers
TCR6 = """SELECT mid.id
FROM "ldbc-finbench"
MATCH (src:Account)
      ->(:AccountTransferAccount WHERE "amount:{0 TO *} AND createTime:{START TO END}")
      ->(mid:Account WHERE "COUNT(inTransfers):{3 TO *}")
      ->(:AccountWithdrawAccount WHERE "createTime:{START TO END}")
      ->(dst:Account WHERE "id:ACCOUNT_ID")
"""

# transfer-or-withdraw edges whose amount exceeds the source's balance
TCR8 = """SELECT dst.id
FROM "ldbc-finbench"
MATCH (loan:Loan WHERE "id:ACCOUNT_ID")
      ->(:LoanDepositAccount WHERE "createTime:{START TO END}")
      ->(src:Account)
      ->(:AccountTransferAccount|AccountWithdrawAccount WHERE "amount:{loan.balance TO *}")
      ->(dst:Account)
"""

# investors sharing companies with the given person
TCR10 = """SELECT JACCARD(p1.id, p2.id)
FROM "ldbc-finbench"
MATCH (p1:Person WHERE "id:PERSON_ID")
      ->(:PersonInvestCompany WHERE "createTime:{START TO END}")
      ->(:Company)
      <-(:PersonInvestCompany WHERE "createTime:{START TO END}")
      <-(p2:Person)
"""

# two parent joins sharing one child subtree; the shared semi-join folds
FOLD_EXAMPLE = """SELECT t.id, t.amount
FROM "ldbc-finbench"
MATCH (s:Account)->(t:AccountTransferAccount)->(d:Account)
      (s)<-(:PersonOwnAccount WHERE "createTime:{START TO END}")
      (d)<-(:PersonOwnAccount WHERE "createTime:{START TO END}")
"""

SUPPORTED = {
    "TCR1": TCR1, "TCR2": TCR2, "TCR3": TCR3, "TCR5": TCR5,
    "TCR7": TCR7, "TCR9": TCR9, "TCR11": TCR11, "TCR12": TCR12,
}

UNSUPPORTED = {
    "TCR4": (TCR4, CYCLE),
    "TCR6": (TCR6, DEGREE_CONDITION),
    "TCR8": (TCR8, LABEL_DISJUNCTION),
    "TCR10": (TCR10, SET_SIMILARITY),
}

PATH_QUERIES = ("TCR3", "TCR5")

ALL = {**SUPPORTED, **{k: v[0] for k, v in UNSUPPORTED.items()}}

__all__ = ["SUPPORTED", "UNSUPPORTED", "PATH_QUERIES", "ALL", "FOLD_EXAMPLE"]
