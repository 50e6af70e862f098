import logging
from collections import namedtuple

from utils.utilities import ContractError, basic_str


logger = logging.getLogger(__name__)


#
# ---- MemorySlot ----
#

# state: the tracking hidden state Tensor [C_h, H, W]. anchor: the integrated tracking Pose at step_index
MemorySlot = namedtuple('MemorySlot', ['state', 'anchor', 'step_index'])


#
# ---- MemoryBuffer class ----
#

class MemoryBuffer:
    """
    A bounded, ordered store of selected tracking hidden states. Slots are kept in insertion (step) order; once full,
    inserting evicts the oldest slot. Instances are not modified after creation: use with_slot() to get a new buffer.
    """


    def __init__(self, capacity, slots=()):
        if capacity < 1:
            raise ContractError(f"MemoryBuffer capacity must be >= 1. capacity={capacity}")

        slots = list(slots)
        if len(slots) > capacity:
            raise ContractError(f"too many slots for capacity: {len(slots)} > {capacity}")

        for prev_slot, next_slot in zip(slots[:-1], slots[1:]):
            if next_slot.step_index <= prev_slot.step_index:
                raise ContractError(f"slot step indices must strictly increase: {prev_slot.step_index} then "
                                    f"{next_slot.step_index}")

        self.capacity = capacity
        self.slots = tuple(slots)


    def __repr__(self):
        return str((self.capacity, self.stored_steps()))


    def __str__(self):
        return basic_str(self)


    def __len__(self):
        return len(self.slots)


    def is_empty(self):
        return len(self.slots) == 0


    def is_full(self):
        return len(self.slots) == self.capacity


    def last_slot(self):
        return self.slots[-1] if self.slots else None


    def states(self):
        return [slot.state for slot in self.slots]


    def stored_steps(self):
        return [slot.step_index for slot in self.slots]


    def with_slot(self, slot):
        """
        :return: a new MemoryBuffer with slot appended, evicting the oldest slot first if I am full
        """
        slots = list(self.slots)
        if self.is_full():
            slots.pop(0)
        slots.append(slot)
        return MemoryBuffer(self.capacity, slots)
