from rest_framework.pagination import LimitOffsetPagination
from rest_framework.response import Response


class CustomLimitOffsetPagination(LimitOffsetPagination):
    """
    Limit/offset pagination that returns the bare list.
    The total row count travels in the ``X-Total-Count`` header.
    """
    default_limit = 500
    limit_query_param = 'limit'
    offset_query_param = 'offset'
    max_limit = 20000

    def get_paginated_response(self, data):
        response = Response(data)
        response['X-Total-Count'] = str(self.count)
        return response

    def get_paginated_response_schema(self, schema):
        return schema
