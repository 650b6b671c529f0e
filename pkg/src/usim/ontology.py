"""Ontology, dialogue acts, and act validation.

The ontology fixes the vocabulary every other component speaks: domains, their
informable and requestable slots, value inventories, and the two system intent
inventories whose order determines the feature layout of any model trained
against it. An ontology is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .util import fingerprint, read_json, write_json

GENERAL = "general"
DONTCARE = "dontcare"
REQUESTED = "?"
RESERVED_VALUES = (DONTCARE, REQUESTED)

# User-side vocabulary. The ontology file carries only the system inventories;
# the user side is fixed to the two task intents plus the closing general acts.
USER_INTENTS = ("inform", "request")
USER_GENERAL_INTENTS = ("thank", "bye")

DEFAULT_GENERAL_INTENTS = ("welcome", "reqmore", "bye", "thank", "greet")
DEFAULT_DOMAIN_INTENTS = (
    "recommend",
    "inform",
    "request",
    "select",
    "book",
    "nobook",
    "offerbook",
    "offerbooked",
    "nooffer",
)

ONTOLOGY_SCHEMA = "ontology/1"


class OntologyError(ValueError):
    """Raised for malformed ontologies or acts that do not validate."""


@dataclass(frozen=True)
class SlotSpec:
    name: str
    values: tuple[str, ...] = ()
    requestable: bool = False

    def __post_init__(self) -> None:
        for v in self.values:
            if v in RESERVED_VALUES:
                raise OntologyError(
                    f"slot {self.name!r}: value {v!r} is reserved and cannot appear in an inventory"
                )


@dataclass(frozen=True)
class DomainSpec:
    name: str
    slots: tuple[SlotSpec, ...]

    def __post_init__(self) -> None:
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise OntologyError(f"domain {self.name!r}: duplicate slot names")
        if not self.informable and not self.requestable:
            raise OntologyError(f"domain {self.name!r}: needs informable or requestable slots")

    @property
    def informable(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots if s.values)

    @property
    def requestable(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots if s.requestable)

    def slot(self, name: str) -> SlotSpec:
        for s in self.slots:
            if s.name == name:
                return s
        raise OntologyError(f"domain {self.name!r}: unknown slot {name!r}")

    def has_slot(self, name: str) -> bool:
        return any(s.name == name for s in self.slots)


@dataclass(frozen=True)
class DialogueAct:
    """One atomic utterance meaning: (intent, domain, slot, value).

    General acts use domain == GENERAL and carry no slot or value.
    """

    intent: str
    domain: str = GENERAL
    slot: Optional[str] = None
    value: Optional[str] = None

    @property
    def is_general(self) -> bool:
        return self.domain == GENERAL

    def to_list(self) -> list:
        return [self.intent, self.domain, self.slot, self.value]

    @classmethod
    def from_list(cls, row: Iterable) -> "DialogueAct":
        intent, domain, slot, value = row
        return cls(intent, domain, slot, value)

    def __str__(self) -> str:
        if self.is_general:
            return f"{GENERAL}-{self.intent}()"
        val = "" if self.value is None else f"={self.value}"
        return f"{self.intent}({self.domain}-{self.slot}{val})"


class Ontology:
    def __init__(
        self,
        domains: Iterable[DomainSpec],
        general_intents: Iterable[str] = DEFAULT_GENERAL_INTENTS,
        domain_specific_intents: Iterable[str] = DEFAULT_DOMAIN_INTENTS,
    ) -> None:
        self.domains: tuple[DomainSpec, ...] = tuple(domains)
        self.general_intents: tuple[str, ...] = tuple(general_intents)
        self.domain_specific_intents: tuple[str, ...] = tuple(domain_specific_intents)
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise OntologyError("duplicate domain names")
        for intents, label in (
            (self.general_intents, "general_intents"),
            (self.domain_specific_intents, "domain_specific_intents"),
        ):
            if len(set(intents)) != len(intents):
                raise OntologyError(f"{label}: duplicate intents")
        self._domains = {d.name: d for d in self.domains}

    @property
    def n_gen(self) -> int:
        return len(self.general_intents)

    @property
    def n_spec(self) -> int:
        return len(self.domain_specific_intents)

    def domain(self, name: str) -> DomainSpec:
        try:
            return self._domains[name]
        except KeyError:
            raise OntologyError(f"unknown domain {name!r}") from None

    def has_domain(self, name: str) -> bool:
        return name in self._domains

    def domain_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.domains)

    def values_for(self, domain: str, slot: str) -> tuple[str, ...]:
        return self.domain(domain).slot(slot).values

    # -- act validation -------------------------------------------------

    def validate_act(self, act: DialogueAct, role: str) -> None:
        """Raise OntologyError unless the act is legal for the given speaker.

        Validation is total: every act either passes or raises with a
        diagnostic naming the offending field. Values of informable slots must
        come from the inventory (or be reserved); requestable-only slots take
        free-form values, since entity attributes are not enumerated.
        """
        if role not in ("user", "system"):
            raise OntologyError(f"unknown role {role!r}")
        if act.is_general:
            allowed = USER_GENERAL_INTENTS if role == "user" else self.general_intents
            if act.intent not in allowed:
                raise OntologyError(f"{role} general intent {act.intent!r} not in inventory")
            if act.slot is not None or act.value is not None:
                raise OntologyError(f"general act {act} must not carry slot or value")
            return
        allowed = USER_INTENTS if role == "user" else self.domain_specific_intents
        if act.intent not in allowed:
            raise OntologyError(f"{role} intent {act.intent!r} not in inventory")
        domain = self.domain(act.domain)
        if act.slot is None:
            if act.value is not None:
                raise OntologyError(f"act {act}: value without slot")
            if role == "user":
                raise OntologyError(f"user act {act}: slot required")
            return
        slot = domain.slot(act.slot)
        if act.intent == "request":
            if act.value not in (None, REQUESTED):
                raise OntologyError(f"request act {act}: value must be absent or '?'")
            if role == "user" and not slot.requestable and not slot.values:
                raise OntologyError(f"act {act}: slot is neither requestable nor informable")
            return
        if act.value is None:
            raise OntologyError(f"act {act}: inform-style act needs a value")
        if role == "user":
            if act.intent != "inform":
                raise OntologyError(f"user intent {act.intent!r} not in inventory")
            if act.value != DONTCARE and slot.values and act.value not in slot.values:
                raise OntologyError(
                    f"act {act}: value not in inventory of {act.domain}-{act.slot}"
                )

    def validate_acts(self, acts: Iterable[DialogueAct], role: str) -> None:
        for act in acts:
            self.validate_act(act, role)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": ONTOLOGY_SCHEMA,
            "domains": [
                {
                    "name": d.name,
                    "slots": [
                        {"name": s.name, "values": list(s.values), "requestable": s.requestable}
                        for s in d.slots
                    ],
                }
                for d in self.domains
            ],
            "general_intents": list(self.general_intents),
            "domain_specific_intents": list(self.domain_specific_intents),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ontology":
        if data.get("schema") != ONTOLOGY_SCHEMA:
            raise OntologyError(f"expected schema {ONTOLOGY_SCHEMA!r}, got {data.get('schema')!r}")
        domains = []
        for d in data["domains"]:
            slots = tuple(
                SlotSpec(s["name"], tuple(s.get("values", ())), bool(s.get("requestable", False)))
                for s in d["slots"]
            )
            domains.append(DomainSpec(d["name"], slots))
        return cls(domains, data["general_intents"], data["domain_specific_intents"])

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "Ontology":
        return cls.from_dict(read_json(path))

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def make_toy_ontology() -> Ontology:
    """Bundled 3-domain fixture: two domains share slots, one is unlike the rest."""
    areas = ("north", "south", "centre", "east", "west")
    prices = ("cheap", "moderate", "expensive")
    lodging = DomainSpec(
        "lodging",
        (
            SlotSpec("area", areas),
            SlotSpec("pricerange", prices, requestable=True),
            SlotSpec("stars", ("2", "3", "4")),
            SlotSpec("parking", ("yes", "no")),
            SlotSpec("name", requestable=True),
            SlotSpec("phone", requestable=True),
            SlotSpec("postcode", requestable=True),
        ),
    )
    eatery = DomainSpec(
        "eatery",
        (
            SlotSpec("area", areas),
            SlotSpec("pricerange", prices, requestable=True),
            SlotSpec("food", ("italian", "chinese", "indian", "british")),
            SlotSpec("name", requestable=True),
            SlotSpec("phone", requestable=True),
            SlotSpec("address", requestable=True),
        ),
    )
    transit = DomainSpec(
        "transit",
        (
            SlotSpec("departure", ("kings cross", "riverside", "airport")),
            SlotSpec("destination", ("city hall", "museum", "harbour")),
            SlotSpec("day", ("monday", "friday", "sunday")),
            SlotSpec("leaveat", ("08:00", "12:00", "18:00")),
            SlotSpec("id", requestable=True),
            SlotSpec("price", requestable=True),
            SlotSpec("duration", requestable=True),
        ),
    )
    return Ontology((lodging, eatery, transit))


# Entity-identifying slot per domain, used when offering concrete results.
def key_slot(domain: DomainSpec) -> str:
    for candidate in ("name", "id"):
        if domain.has_slot(candidate):
            return candidate
    return domain.requestable[0]
