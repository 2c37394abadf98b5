from typing import Dict, List, Literal

import pydantic

BackendKind = Literal['set', 'ordered-tree', 'unordered-tree', 'series', 'propositional']


class BackendSpec(pydantic.BaseModel):
    """
    Everything needed to rebuild a backend.  Stored in checkpoints and manifests.

    Only the fields relevant to the kind are used:
     - set: symbols
     - ordered-tree / unordered-tree: symbols (the node labels)
     - series: variables, features
     - propositional: numeric, categorical, classes
    """
    kind: BackendKind
    symbols: List[str] = []
    variables: List[str] = []
    features: List[str] = []
    numeric: List[str] = []
    categorical: Dict[str, List[str]] = {}
    classes: List[str] = []

    class Config:
        extra = pydantic.Extra.forbid
        allow_mutation = False

    @property
    def is_tree(self) -> bool:
        return self.kind in ('ordered-tree', 'unordered-tree')
